import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sslscene import datasets


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """32px, 3-band, 3-class dataset with splits; small enough for unit tests."""
    out = tmp_path_factory.mktemp("tiny")
    spec = datasets.SynthSpec(classes=3, bands=3, size=32, per_class=12, seed=11, out=out)
    manifest = datasets.synth_generate(spec)
    return datasets.split(manifest, datasets.SplitSpec(test_fraction=0.25, seed=3))


def make_sample(seed=0, shape=(3, 32, 32), sample_id="s0"):
    rng = np.random.default_rng(seed)
    return datasets.RasterSample(
        id=sample_id,
        pixels=rng.random(shape, dtype=np.float32),
        bands=[datasets.BandInfo(f"band_{i}") for i in range(shape[0])],
    )


def make_fake_manifest(per_class, num_classes=4, name="fake", bands=3, with_splits=True):
    """Entry-only manifest (no raster files) for split arithmetic tests."""
    entries = []
    for c in range(num_classes):
        for j in range(per_class):
            entries.append(datasets.ManifestEntry(id=f"c{c}_{j:05d}", path=f"r/c{c}_{j}.sslr", label=c))
    splits = {"pretrain": tuple(e.id for e in entries), "finetune": (), "test": ()}
    return datasets.DatasetManifest(
        name=name,
        root=Path("/nonexistent"),
        num_classes=num_classes,
        classes=tuple(f"class{c}" for c in range(num_classes)),
        entries=tuple(entries),
        splits=splits if with_splits else {},
        bands=tuple(f"band_{i}" for i in range(bands)),
    )
