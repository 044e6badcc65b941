import json
from pathlib import Path

import numpy as np
import pytest

from sslscene import datasets
from sslscene.datasets import (
    BandMismatchError,
    DatasetError,
    DecodeError,
    DuplicateIdError,
    InsufficientSamplesError,
    LabelOutOfRangeError,
    ManifestFormatError,
    SplitSpec,
    SynthSpec,
    UnknownIdError,
)

from conftest import make_fake_manifest


class TestManifestIO:
    def test_roundtrip(self, tiny_dataset, tmp_path):
        path = datasets.save_manifest(tiny_dataset, tmp_path)
        loaded = datasets.load_manifest(path)
        assert loaded.name == tiny_dataset.name
        assert loaded.num_classes == tiny_dataset.num_classes
        assert loaded.ids() == tiny_dataset.ids()
        assert loaded.splits == tiny_dataset.splits

    def test_echoes_counts(self, tiny_dataset):
        assert len(tiny_dataset) == 36
        assert tiny_dataset.num_classes == 3

    def test_missing_file(self, tmp_path):
        with pytest.raises(ManifestFormatError):
            datasets.load_manifest(tmp_path / "nope.json")

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "manifest.json"
        p.write_text("{not json")
        with pytest.raises(ManifestFormatError):
            datasets.load_manifest(p)

    def test_missing_keys(self, tmp_path):
        p = tmp_path / "manifest.json"
        p.write_text(json.dumps({"name": "x"}))
        with pytest.raises(ManifestFormatError):
            datasets.load_manifest(p)

    def test_duplicate_id(self, tmp_path):
        doc = {
            "name": "d",
            "num_classes": 2,
            "classes": ["a", "b"],
            "entries": [
                {"id": "s_0001", "path": "x.sslr", "label": 0},
                {"id": "s_0001", "path": "y.sslr", "label": 1},
            ],
        }
        p = tmp_path / "manifest.json"
        p.write_text(json.dumps(doc))
        with pytest.raises(DuplicateIdError):
            datasets.load_manifest(p)

    def test_label_out_of_range(self, tmp_path):
        doc = {
            "name": "d",
            "num_classes": 4,
            "classes": ["a", "b", "c", "d"],
            "entries": [{"id": "s1", "path": "x.sslr", "label": 7}],
        }
        p = tmp_path / "manifest.json"
        p.write_text(json.dumps(doc))
        with pytest.raises(LabelOutOfRangeError):
            datasets.load_manifest(p)

    def test_overlapping_splits_rejected(self, tmp_path):
        doc = {
            "name": "d",
            "num_classes": 1,
            "classes": ["a"],
            "entries": [{"id": "s1", "path": "x.sslr", "label": 0}],
            "splits": {"pretrain": ["s1"], "test": ["s1"]},
        }
        p = tmp_path / "manifest.json"
        p.write_text(json.dumps(doc))
        with pytest.raises(ManifestFormatError):
            datasets.load_manifest(p)


class TestRasters:
    def test_read_sample_shape(self, tiny_dataset):
        sample = datasets.read_sample(tiny_dataset, tiny_dataset.entries[0].id)
        assert sample.pixels.shape == (3, 32, 32)
        assert sample.pixels.dtype == np.float32
        assert sample.label == tiny_dataset.entries[0].label
        assert sample.class_name == tiny_dataset.classes[sample.label]

    def test_unknown_id(self, tiny_dataset):
        with pytest.raises(UnknownIdError):
            datasets.read_sample(tiny_dataset, "zzz")

    def test_truncated_raster(self, tiny_dataset, tmp_path):
        src = tiny_dataset.root / tiny_dataset.entries[0].path
        broken = tmp_path / "broken.sslr"
        broken.write_bytes(src.read_bytes()[:-8])
        with pytest.raises(DecodeError):
            datasets.read_raster(broken)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.sslr"
        p.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(DecodeError):
            datasets.read_raster(p)

    def test_raster_write_read_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        pixels = rng.random((5, 17, 9)).astype(np.float32)
        datasets.write_raster(tmp_path / "x.sslr", pixels)
        again = datasets.read_raster(tmp_path / "x.sslr")
        assert np.array_equal(pixels, again)

    def test_png_ingestion(self, tmp_path):
        from PIL import Image

        rng = np.random.default_rng(1)
        arr = rng.integers(0, 256, size=(20, 24, 3), dtype=np.uint8)
        img_path = tmp_path / "x.png"
        Image.fromarray(arr, "RGB").save(img_path)
        doc = {
            "name": "png",
            "num_classes": 1,
            "classes": ["a"],
            "entries": [{"id": "p1", "path": "x.png", "label": 0}],
        }
        (tmp_path / "manifest.json").write_text(json.dumps(doc))
        manifest = datasets.load_manifest(tmp_path / "manifest.json")
        sample = datasets.read_sample(manifest, "p1")
        assert sample.pixels.shape == (3, 20, 24)
        assert sample.pixels.max() <= 1.0 and sample.pixels.min() >= 0.0
        assert np.allclose(sample.pixels, np.moveaxis(arr, -1, 0) / 255.0)

    def test_band_mismatch(self, tmp_path):
        datasets.write_raster(tmp_path / "x.sslr", np.zeros((2, 16, 16), np.float32))
        doc = {
            "name": "b",
            "num_classes": 1,
            "classes": ["a"],
            "entries": [{"id": "s1", "path": "x.sslr", "label": 0}],
            "bands": ["b0", "b1", "b2"],
        }
        (tmp_path / "manifest.json").write_text(json.dumps(doc))
        manifest = datasets.load_manifest(tmp_path / "manifest.json")
        with pytest.raises(BandMismatchError):
            datasets.read_sample(manifest, "s1")


class TestSplit:
    def test_balanced_stratified_counts(self):
        manifest = make_fake_manifest(per_class=200, num_classes=4)
        out = datasets.split(manifest, SplitSpec(test_fraction=0.25, seed=7))
        test_ids = out.split_ids("test")
        assert len(test_ids) == 200
        assert len(out.split_ids("pretrain")) == 600
        per_class = {c: 0 for c in range(4)}
        for i in test_ids:
            per_class[out.entry(i).label] += 1
        assert all(v == 50 for v in per_class.values())

    def test_paper_scale_counts(self):
        manifest = make_fake_manifest(per_class=2700, num_classes=10)
        out = datasets.split(manifest, SplitSpec(test_fraction=0.2, seed=1))
        assert len(out.split_ids("test")) == 5400

    def test_deterministic(self):
        manifest = make_fake_manifest(per_class=50)
        a = datasets.split(manifest, SplitSpec(test_fraction=0.25, seed=7))
        b = datasets.split(manifest, SplitSpec(test_fraction=0.25, seed=7))
        assert a.splits == b.splits
        c = datasets.split(manifest, SplitSpec(test_fraction=0.25, seed=8))
        assert c.splits != a.splits

    def test_stratification_within_one(self):
        rng = np.random.default_rng(0)
        entries = []
        sizes = [37, 53, 11, 29]
        for c, n in enumerate(sizes):
            for j in range(n):
                entries.append(datasets.ManifestEntry(id=f"c{c}_{j}", path="x", label=c))
        manifest = make_fake_manifest(per_class=1)
        manifest = datasets.DatasetManifest(
            name="skew", root=Path("/x"), num_classes=4,
            classes=("a", "b", "c", "d"), entries=tuple(entries),
        )
        for frac in (0.2, 0.25, 0.33):
            out = datasets.split(manifest, SplitSpec(test_fraction=frac, seed=5))
            test_ids = set(out.split_ids("test"))
            for c, n in enumerate(sizes):
                got = sum(1 for i in test_ids if out.entry(i).label == c)
                assert abs(got - n * frac) <= 1.0

    def test_pretrain_excludes_test_by_default(self):
        manifest = make_fake_manifest(per_class=20)
        out = datasets.split(manifest, SplitSpec(test_fraction=0.25, seed=2))
        assert not set(out.split_ids("pretrain")) & set(out.split_ids("test"))

    def test_pretrain_includes_test_flag(self):
        manifest = make_fake_manifest(per_class=20)
        out = datasets.split(manifest, SplitSpec(test_fraction=0.25, seed=2), pretrain_includes_test=True)
        assert len(out.split_ids("pretrain")) == len(manifest)

    def test_unlabeled_stratified_rejected(self):
        entries = tuple(datasets.ManifestEntry(id=f"s{j}", path="x") for j in range(10))
        manifest = datasets.DatasetManifest(
            name="u", root=Path("/x"), num_classes=0, classes=(), entries=entries
        )
        with pytest.raises(ManifestFormatError):
            datasets.split(manifest, SplitSpec(test_fraction=0.5, seed=0))

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            SplitSpec(test_fraction=1.5, seed=0)


class TestFewShot:
    def test_five_per_class(self):
        manifest = datasets.split(make_fake_manifest(per_class=50), SplitSpec(0.25, 1))
        out = datasets.few_shot_sample(manifest, 5, seed=3)
        ids = out.split_ids("finetune")
        assert len(ids) == 20
        counts = {c: 0 for c in range(4)}
        for i in ids:
            counts[out.entry(i).label] += 1
        assert all(v == 5 for v in counts.values())

    def test_zero_shot_empty(self):
        manifest = datasets.split(make_fake_manifest(per_class=10), SplitSpec(0.25, 1))
        out = datasets.few_shot_sample(manifest, 0, seed=3)
        assert out.split_ids("finetune") == ()

    def test_insufficient(self):
        manifest = datasets.split(make_fake_manifest(per_class=200), SplitSpec(0.25, 1))
        with pytest.raises(InsufficientSamplesError):
            datasets.few_shot_sample(manifest, 999, seed=3)

    def test_partition_preserved(self):
        manifest = datasets.split(make_fake_manifest(per_class=50), SplitSpec(0.25, 1))
        out = datasets.few_shot_sample(manifest, 5, seed=3)
        fin = set(out.split_ids("finetune"))
        assert not fin & set(out.split_ids("test"))
        assert not fin & set(out.split_ids("pretrain"))
        out.validate()

    def test_deterministic(self):
        manifest = datasets.split(make_fake_manifest(per_class=50), SplitSpec(0.25, 1))
        a = datasets.few_shot_sample(manifest, 5, seed=3)
        b = datasets.few_shot_sample(manifest, 5, seed=3)
        assert a.splits == b.splits


class TestSubsample:
    def test_paper_counts(self):
        manifest = make_fake_manifest(per_class=6300, num_classes=4)  # 25,200 pretrain
        out = datasets.subsample_fraction(manifest, 0.1, seed=1)
        assert len(out.split_ids("pretrain")) == 2520

    def test_half_of_21600(self):
        manifest = make_fake_manifest(per_class=5400, num_classes=4)
        out = datasets.subsample_fraction(manifest, 0.5, seed=1)
        assert len(out.split_ids("pretrain")) == 10800

    def test_identity(self):
        manifest = make_fake_manifest(per_class=20)
        out = datasets.subsample_fraction(manifest, 1.0, seed=1)
        assert out.split_ids("pretrain") == manifest.split_ids("pretrain")

    def test_out_of_range(self):
        manifest = make_fake_manifest(per_class=5)
        for frac in (0.0, -0.2, 1.5):
            with pytest.raises(ValueError):
                datasets.subsample_fraction(manifest, frac, seed=1)

    def test_deterministic_and_subset(self):
        manifest = make_fake_manifest(per_class=100)
        a = datasets.subsample_fraction(manifest, 0.3, seed=9)
        b = datasets.subsample_fraction(manifest, 0.3, seed=9)
        assert a.splits == b.splits
        assert set(a.split_ids("pretrain")) <= set(manifest.split_ids("pretrain"))


class TestMix:
    def test_paper_cardinality(self):
        a = make_fake_manifest(per_class=2000, num_classes=4, name="aid_like")
        b = make_fake_manifest(per_class=6300, num_classes=4, name="nr_like")
        out = datasets.mix([a, b])
        assert len(out.split_ids("pretrain")) == 8000 + 25200 == 33200
        assert all(e.label is None for e in out.entries)

    def test_three_way(self):
        ms = [make_fake_manifest(per_class=n, num_classes=1, name=f"m{i}") for i, n in enumerate((100, 200, 300))]
        out = datasets.mix(ms)
        assert len(out.split_ids("pretrain")) == 600

    def test_duplicate_names_rejected(self):
        a = make_fake_manifest(per_class=5, name="same")
        b = make_fake_manifest(per_class=5, name="same")
        with pytest.raises(DatasetError):
            datasets.mix([a, b])

    def test_band_mismatch_rejected(self):
        a = make_fake_manifest(per_class=5, name="a", bands=3)
        b = make_fake_manifest(per_class=5, name="b", bands=13)
        with pytest.raises(BandMismatchError):
            datasets.mix([a, b])

    def test_needs_two(self):
        with pytest.raises(ValueError):
            datasets.mix([make_fake_manifest(per_class=5)])

    def test_mixed_samples_readable(self, tiny_dataset, tmp_path):
        other_spec = SynthSpec(classes=2, bands=3, size=32, per_class=4, seed=5, out=tmp_path / "o")
        other = datasets.synth_generate(other_spec)
        other = datasets.split(other, SplitSpec(0.25, 1))
        mixed = datasets.mix([tiny_dataset, other])
        sample = datasets.read_sample(mixed, mixed.split_ids("pretrain")[0])
        assert sample.pixels.shape == (3, 32, 32)
        assert sample.label is None


class TestSynthGenerate:
    def test_echo_counts(self, tiny_dataset):
        assert len(tiny_dataset) == 36
        assert len(tiny_dataset.classes) == 3

    def test_deterministic_bytes(self, tmp_path):
        spec_a = SynthSpec(classes=2, bands=2, size=16, per_class=3, seed=4, out=tmp_path / "a")
        spec_b = SynthSpec(classes=2, bands=2, size=16, per_class=3, seed=4, out=tmp_path / "b")
        ma = datasets.synth_generate(spec_a)
        mb = datasets.synth_generate(spec_b)
        for ea, eb in zip(ma.entries, mb.entries):
            assert (ma.root / ea.path).read_bytes() == (mb.root / eb.path).read_bytes()

    def test_seed_changes_bytes(self, tmp_path):
        ma = datasets.synth_generate(SynthSpec(classes=2, bands=2, size=16, per_class=2, seed=4, out=tmp_path / "a"))
        mb = datasets.synth_generate(SynthSpec(classes=2, bands=2, size=16, per_class=2, seed=5, out=tmp_path / "b"))
        same = all(
            (ma.root / ea.path).read_bytes() == (mb.root / eb.path).read_bytes()
            for ea, eb in zip(ma.entries, mb.entries)
        )
        assert not same

    def test_multispectral_class_separability(self, tmp_path):
        # per-band histogram distance: classes must differ more across than within
        spec = SynthSpec(classes=10, bands=13, size=32, per_class=8, seed=21, out=tmp_path / "m")
        manifest = datasets.synth_generate(spec)
        bins = np.linspace(0.0, 1.5, 25)

        def hist_features(sample):
            return np.stack(
                [np.histogram(band, bins=bins, density=True)[0] for band in sample.pixels]
            )

        feats: dict[int, list[np.ndarray]] = {}
        for e in manifest.entries:
            feats.setdefault(e.label, []).append(hist_features(datasets.read_sample(manifest, e.id)))

        def dist(f, g):
            return float(np.mean(np.abs(f - g)))

        intra, inter = [], []
        labels = sorted(feats)
        for c in labels:
            fs = feats[c]
            intra.extend(dist(fs[i], fs[j]) for i in range(len(fs)) for j in range(i + 1, len(fs)))
        for ci in labels:
            for cj in labels:
                if ci < cj:
                    inter.extend(dist(f, g) for f in feats[ci][:4] for g in feats[cj][:4])
        assert np.mean(inter) > np.mean(intra)

    def test_invalid_specs(self, tmp_path):
        with pytest.raises(ValueError):
            SynthSpec(classes=1, bands=3, size=32, per_class=2, seed=0, out=tmp_path)
        with pytest.raises(ValueError):
            SynthSpec(classes=2, bands=0, size=32, per_class=2, seed=0, out=tmp_path)
        with pytest.raises(ValueError):
            SynthSpec(classes=2, bands=3, size=8, per_class=2, seed=0, out=tmp_path)

    def test_variant_changes_families(self, tmp_path):
        a = SynthSpec(classes=4, bands=3, size=16, per_class=1, seed=4, out=tmp_path / "a")
        b = SynthSpec(classes=4, bands=3, size=16, per_class=1, seed=4, out=tmp_path / "b", variant=4)
        assert datasets.synth_class_names(a) != datasets.synth_class_names(b)


class TestFingerprint:
    def test_stable_and_sensitive(self, tiny_dataset):
        assert tiny_dataset.fingerprint() == tiny_dataset.fingerprint()
        other = datasets.split(tiny_dataset, SplitSpec(0.5, 9))
        assert other.fingerprint() != tiny_dataset.fingerprint()
