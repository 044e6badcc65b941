"""Dataset manifests, rasters, deterministic splits, and the synthetic scene generator.

A dataset on disk is a directory with a ``manifest.json`` plus one raster file
per sample.  Rasters are either our raw band-interleaved format (``.sslr``:
magic bytes, C/H/W header, float32 payload) or plain 8-bit PNG for RGB-style
data.  Manifests are immutable once loaded; every split operation returns a
new manifest and is a pure function of (manifest, spec, seed).
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

RASTER_MAGIC = b"SSLR"
SPLIT_NAMES = ("pretrain", "finetune", "test")


class DatasetError(Exception):
    """Base class for manifest and raster failures."""


class ManifestFormatError(DatasetError):
    pass


class DuplicateIdError(DatasetError):
    pass


class LabelOutOfRangeError(DatasetError):
    pass


class UnknownIdError(DatasetError):
    pass


class DecodeError(DatasetError):
    pass


class BandMismatchError(DatasetError):
    pass


class InsufficientSamplesError(DatasetError):
    pass


@dataclass(frozen=True)
class BandInfo:
    name: str
    wavelength_nm: float | None = None


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: str
    label: int | None = None


@dataclass
class RasterSample:
    """One C-band H*W image with band metadata and an optional class label."""

    id: str
    pixels: np.ndarray  # (C, H, W) float32
    bands: list[BandInfo]
    label: int | None = None
    class_name: str | None = None

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.pixels.shape)  # type: ignore[return-value]


@dataclass(frozen=True)
class SplitSpec:
    """Deterministic test/pretrain split: same spec + manifest => same tags."""

    test_fraction: float
    seed: int
    stratified: bool = True

    def __post_init__(self):
        if not (0.0 < self.test_fraction < 1.0):
            raise ValueError(f"test_fraction must be in (0,1), got {self.test_fraction}")


@dataclass(frozen=True)
class DatasetManifest:
    """Enumerates samples, classes and split tags; the unit passed to all samplers."""

    name: str
    root: Path
    num_classes: int
    classes: tuple[str, ...]
    entries: tuple[ManifestEntry, ...]
    splits: dict = field(default_factory=lambda: {k: () for k in SPLIT_NAMES})
    bands: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "entries", tuple(self.entries))
        splits = {k: tuple(self.splits.get(k, ())) for k in SPLIT_NAMES}
        object.__setattr__(self, "splits", splits)
        if self.bands is not None:
            object.__setattr__(self, "bands", tuple(self.bands))
        object.__setattr__(self, "_index", {e.id: e for e in self.entries})

    # -- access helpers -------------------------------------------------

    def entry(self, sample_id: str) -> ManifestEntry:
        try:
            return self._index[sample_id]
        except KeyError:
            raise UnknownIdError(f"unknown sample id {sample_id!r} in manifest {self.name!r}")

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self._index

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> tuple[str, ...]:
        return tuple(e.id for e in self.entries)

    def split_ids(self, name: str) -> tuple[str, ...]:
        if name not in SPLIT_NAMES:
            raise ValueError(f"unknown split {name!r}")
        return self.splits[name]

    def labels_of(self, ids) -> list[int]:
        out = []
        for i in ids:
            lab = self.entry(i).label
            if lab is None:
                raise ManifestFormatError(f"sample {i!r} has no label")
            out.append(lab)
        return out

    def fingerprint(self) -> str:
        """Stable short hash of identity-relevant content (ids, classes, splits)."""
        h = hashlib.sha256()
        h.update(self.name.encode())
        h.update(str(self.num_classes).encode())
        for e in self.entries:
            h.update(f"{e.id}:{e.label}".encode())
        for k in SPLIT_NAMES:
            h.update(k.encode())
            h.update(str(len(self.splits[k])).encode())
        return h.hexdigest()[:16]

    # -- validation ------------------------------------------------------

    def validate(self) -> "DatasetManifest":
        if self.num_classes != len(self.classes):
            raise ManifestFormatError(
                f"num_classes={self.num_classes} but {len(self.classes)} class names"
            )
        seen = set()
        for e in self.entries:
            if e.id in seen:
                raise DuplicateIdError(f"duplicate sample id {e.id!r}")
            seen.add(e.id)
            if e.label is not None and not (0 <= e.label < self.num_classes):
                raise LabelOutOfRangeError(
                    f"label {e.label} of sample {e.id!r} not in [0, {self.num_classes})"
                )
        tagged = set()
        for k in SPLIT_NAMES:
            for i in self.splits[k]:
                if i not in seen:
                    raise ManifestFormatError(f"split {k!r} references unknown id {i!r}")
                if i in tagged:
                    raise ManifestFormatError(f"sample {i!r} appears in two splits")
                tagged.add(i)
        return self


# ---------------------------------------------------------------------------
# Manifest file I/O (JSON)
# ---------------------------------------------------------------------------


def load_manifest(path) -> DatasetManifest:
    """Load and validate a manifest JSON file.  Pixels are not touched."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.is_file():
        raise ManifestFormatError(f"manifest file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ManifestFormatError(f"malformed manifest JSON in {path}: {e}") from e
    for key in ("name", "num_classes", "classes", "entries"):
        if key not in raw:
            raise ManifestFormatError(f"manifest missing required key {key!r}")
    entries = []
    for item in raw["entries"]:
        if "id" not in item or "path" not in item:
            raise ManifestFormatError(f"entry missing id/path: {item!r}")
        entries.append(ManifestEntry(id=item["id"], path=item["path"], label=item.get("label")))
    splits = raw.get("splits", {})
    bands = raw.get("bands")
    manifest = DatasetManifest(
        name=raw["name"],
        root=path.parent,
        num_classes=int(raw["num_classes"]),
        classes=tuple(raw["classes"]),
        entries=tuple(entries),
        splits={k: tuple(splits.get(k, ())) for k in SPLIT_NAMES},
        bands=tuple(bands) if bands is not None else None,
    )
    return manifest.validate()


def save_manifest(manifest: DatasetManifest, path) -> Path:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    doc = {
        "name": manifest.name,
        "num_classes": manifest.num_classes,
        "classes": list(manifest.classes),
        "entries": [
            {"id": e.id, "path": e.path, **({"label": e.label} if e.label is not None else {})}
            for e in manifest.entries
        ],
        "splits": {k: list(manifest.splits[k]) for k in SPLIT_NAMES},
    }
    if manifest.bands is not None:
        doc["bands"] = list(manifest.bands)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1))
    return path


# ---------------------------------------------------------------------------
# Raster I/O
# ---------------------------------------------------------------------------


def write_raster(path, pixels: np.ndarray) -> None:
    """Write a (C,H,W) float array in the raw band-interleaved format."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3:
        raise ValueError(f"expected (C,H,W) array, got shape {pixels.shape}")
    c, h, w = pixels.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(RASTER_MAGIC)
        f.write(struct.pack("<III", c, h, w))
        f.write(np.ascontiguousarray(pixels, dtype="<f4").tobytes())


def read_raster_header(path) -> tuple[int, int, int]:
    """Read only (C,H,W) from a raw raster; cheap band-count probe."""
    with open(path, "rb") as f:
        head = f.read(16)
    if len(head) < 16 or head[:4] != RASTER_MAGIC:
        raise DecodeError(f"{path}: not a raster file (bad magic)")
    return struct.unpack("<III", head[4:16])


def read_raster(path) -> np.ndarray:
    c, h, w = read_raster_header(path)
    if min(c, h, w) < 1 or c > 4096 or max(h, w) > 65536:
        raise DecodeError(f"{path}: implausible raster dims ({c},{h},{w})")
    expected = 16 + 4 * c * h * w
    data = Path(path).read_bytes()
    if len(data) != expected:
        raise DecodeError(f"{path}: truncated raster ({len(data)} bytes, expected {expected})")
    pixels = np.frombuffer(data[16:], dtype="<f4").reshape(c, h, w)
    if not np.all(np.isfinite(pixels)):
        raise DecodeError(f"{path}: raster contains non-finite values")
    return np.ascontiguousarray(pixels, dtype=np.float32)


def _read_png(path) -> np.ndarray:
    from PIL import Image

    try:
        with Image.open(path) as img:
            if img.mode not in ("L", "RGB", "RGBA"):
                raise DecodeError(f"{path}: unsupported PNG mode {img.mode!r} (need 8-bit L/RGB/RGBA)")
            arr = np.asarray(img)
    except DecodeError:
        raise
    except Exception as e:
        raise DecodeError(f"{path}: cannot decode PNG: {e}") from e
    if arr.ndim == 2:
        arr = arr[None, :, :]
    else:
        arr = np.moveaxis(arr, -1, 0)
    return (arr.astype(np.float32) / 255.0).copy()


def _resolve(root: Path, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else root / p


def read_sample(manifest: DatasetManifest, sample_id: str) -> RasterSample:
    """Decode one sample to a (C,H,W) float32 array with its label attached."""
    entry = manifest.entry(sample_id)
    path = _resolve(manifest.root, entry.path)
    if not path.is_file():
        raise DecodeError(f"raster file missing for {sample_id!r}: {path}")
    if path.suffix == ".png":
        pixels = _read_png(path)
    else:
        pixels = read_raster(path)
    c = pixels.shape[0]
    if manifest.bands is not None and c != len(manifest.bands):
        raise BandMismatchError(
            f"sample {sample_id!r} has {c} bands, manifest declares {len(manifest.bands)}"
        )
    if manifest.bands is not None:
        bands = [BandInfo(name) for name in manifest.bands]
    else:
        bands = [BandInfo(f"band_{i}") for i in range(c)]
    class_name = manifest.classes[entry.label] if entry.label is not None else None
    return RasterSample(
        id=sample_id, pixels=pixels, bands=bands, label=entry.label, class_name=class_name
    )


def band_count(manifest: DatasetManifest) -> int:
    """Band count from the manifest, probing the first raster when undeclared."""
    if manifest.bands is not None:
        return len(manifest.bands)
    if not manifest.entries:
        raise ManifestFormatError(f"manifest {manifest.name!r} is empty; band count unknown")
    entry = manifest.entries[0]
    path = _resolve(manifest.root, entry.path)
    if path.suffix == ".png":
        return _read_png(path).shape[0]
    return read_raster_header(path)[0]


# ---------------------------------------------------------------------------
# Splits and samplers
# ---------------------------------------------------------------------------


def _round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def _per_class_quota(counts: list[int], total: int, fraction: float) -> list[int]:
    # largest-remainder allocation of `total` over classes, proportional to counts
    shares = [c * fraction for c in counts]
    base = [int(math.floor(s)) for s in shares]
    missing = total - sum(base)
    if missing < 0:
        order = sorted(range(len(counts)), key=lambda i: (shares[i] - base[i], -i))
        for i in order[: -missing]:
            base[i] -= 1
    elif missing > 0:
        order = sorted(range(len(counts)), key=lambda i: (-(shares[i] - base[i]), i))
        for i in order[:missing]:
            base[i] += 1
    return base


def split(
    manifest: DatasetManifest,
    spec: SplitSpec,
    pretrain_includes_test: bool = False,
) -> DatasetManifest:
    """Assign test/pretrain tags.

    Test size is round-half-away(total * fraction); stratified splits
    distribute it per class by largest remainder, so per-class counts are
    within one sample of the exact proportion.  By default the pretrain tag
    covers everything outside the test set; `pretrain_includes_test` extends
    it to the full dataset for protocols that pretrain on everything.
    """
    n = len(manifest.entries)
    if n == 0:
        raise ManifestFormatError("cannot split an empty manifest")
    total_test = _round_half_away(n * spec.test_fraction)
    rng = np.random.default_rng(spec.seed)
    test: list[str] = []
    if spec.stratified:
        by_class: dict[int, list[str]] = {c: [] for c in range(manifest.num_classes)}
        for e in manifest.entries:
            if e.label is None:
                raise ManifestFormatError("stratified split requires labels on every entry")
            by_class[e.label].append(e.id)
        counts = [len(by_class[c]) for c in range(manifest.num_classes)]
        quotas = _per_class_quota(counts, total_test, spec.test_fraction)
        for c in range(manifest.num_classes):
            ids = sorted(by_class[c])
            order = rng.permutation(len(ids))
            test.extend(ids[j] for j in order[: quotas[c]])
    else:
        ids = sorted(e.id for e in manifest.entries)
        order = rng.permutation(len(ids))
        test.extend(ids[j] for j in order[:total_test])
    test_set = set(test)
    if pretrain_includes_test:
        pretrain = [e.id for e in manifest.entries]
    else:
        pretrain = [e.id for e in manifest.entries if e.id not in test_set]
    out = replace(
        manifest,
        splits={"pretrain": tuple(pretrain), "finetune": (), "test": tuple(sorted(test_set))},
    )
    return out.validate()


def few_shot_sample(manifest: DatasetManifest, k: int, seed: int) -> DatasetManifest:
    """Tag exactly k labeled samples per class as the finetune set.

    Draws without replacement from non-test samples and removes the chosen
    ids from the pretrain tag so the split tags stay a partition.
    """
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    test_set = set(manifest.splits["test"])
    by_class: dict[int, list[str]] = {c: [] for c in range(manifest.num_classes)}
    for e in manifest.entries:
        if e.label is not None and e.id not in test_set:
            by_class[e.label].append(e.id)
    rng = np.random.default_rng(seed)
    chosen: list[str] = []
    for c in range(manifest.num_classes):
        ids = sorted(by_class[c])
        if len(ids) < k:
            raise InsufficientSamplesError(
                f"class {manifest.classes[c]!r} has {len(ids)} non-test labeled samples, need {k}"
            )
        order = rng.permutation(len(ids))
        chosen.extend(ids[j] for j in order[:k])
    chosen_set = set(chosen)
    pretrain = tuple(i for i in manifest.splits["pretrain"] if i not in chosen_set)
    out = replace(
        manifest,
        splits={"pretrain": pretrain, "finetune": tuple(chosen), "test": manifest.splits["test"]},
    )
    return out.validate()


def subsample_fraction(manifest: DatasetManifest, fraction: float, seed: int) -> DatasetManifest:
    """Shrink the pretrain tag to round(fraction * size) ids, uniformly."""
    if not (0.0 < fraction <= 1.0):
        raise ValueError(f"fraction must be in (0,1], got {fraction}")
    pretrain = manifest.splits["pretrain"]
    m = _round_half_away(len(pretrain) * fraction)
    rng = np.random.default_rng(seed)
    ids = sorted(pretrain)
    order = rng.permutation(len(ids))
    keep = {ids[j] for j in order[:m]}
    out = replace(
        manifest,
        splits={
            "pretrain": tuple(i for i in pretrain if i in keep),
            "finetune": manifest.splits["finetune"],
            "test": manifest.splits["test"],
        },
    )
    return out.validate()


def mix(manifests: list[DatasetManifest]) -> DatasetManifest:
    """Union of pretrain splits across datasets, ids namespaced, labels dropped.

    Pretraining is unlabeled, so the mixed manifest has no classes; entry
    paths become absolute so the mix can live outside any single dataset root.
    """
    if len(manifests) < 2:
        raise ValueError("mix needs at least two manifests")
    names = [m.name for m in manifests]
    if len(set(names)) != len(names):
        raise DatasetError(f"duplicate source names in mix: {names}")
    bands = [band_count(m) for m in manifests]
    if len(set(bands)) != 1:
        raise BandMismatchError(f"band-count mismatch in mix: {dict(zip(names, bands))}")
    entries: list[ManifestEntry] = []
    pretrain: list[str] = []
    for m in manifests:
        for sid in m.splits["pretrain"]:
            e = m.entry(sid)
            new_id = f"{m.name}/{sid}"
            entries.append(
                ManifestEntry(id=new_id, path=str(_resolve(m.root, e.path)), label=None)
            )
            pretrain.append(new_id)
    out = DatasetManifest(
        name="+".join(names),
        root=Path("."),
        num_classes=0,
        classes=(),
        entries=tuple(entries),
        splits={"pretrain": tuple(pretrain), "finetune": (), "test": ()},
        bands=tuple(f"band_{i}" for i in range(bands[0])),
    )
    return out.validate()


# ---------------------------------------------------------------------------
# Synthetic scene generator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the procedural multi-band scene generator.

    `variant` rotates the class-to-texture-family assignment and reseeds the
    per-class spectral profiles; two specs that differ in variant (or seed)
    act as distinct imaging domains.
    """

    classes: int
    bands: int
    size: int
    per_class: int
    seed: int
    out: Path | None = None
    variant: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("need at least 2 classes")
        if self.bands < 1:
            raise ValueError("need at least 1 band")
        if self.size < 16:
            raise ValueError("size must be >= 16")
        if self.per_class < 1:
            raise ValueError("per_class must be >= 1")


def _grid(size: int):
    ax = np.linspace(-1.0, 1.0, size, dtype=np.float64)
    return np.meshgrid(ax, ax, indexing="ij")


def _rot(yy, xx, theta):
    u = xx * math.cos(theta) + yy * math.sin(theta)
    v = -xx * math.sin(theta) + yy * math.cos(theta)
    return u, v


def _tex_stripes(rng, size):
    yy, xx = _grid(size)
    u, _ = _rot(yy, xx, rng.uniform(0, math.pi))
    f = rng.uniform(1.5, 8.0)
    return 0.5 + 0.5 * np.sin(2 * math.pi * f * u + rng.uniform(0, 2 * math.pi))

def _tex_checker(rng, size):
    yy, xx = _grid(size)
    u, v = _rot(yy, xx, rng.uniform(0, math.pi / 2))
    f = rng.uniform(1.5, 5.5)
    cells = np.floor(f * u + rng.uniform(0, 1)) + np.floor(f * v + rng.uniform(0, 1))
    return np.mod(cells, 2.0)

def _tex_blobs(rng, size):
    noise = rng.standard_normal((size, size))
    sigma = rng.uniform(0.04, 0.16) * size
    field_ = ndimage.gaussian_filter(noise, sigma, mode="reflect")
    lo, hi = field_.min(), field_.max()
    return (field_ - lo) / max(hi - lo, 1e-9)

def _tex_gradient(rng, size):
    yy, xx = _grid(size)
    u, _ = _rot(yy, xx, rng.uniform(0, 2 * math.pi))
    g = (u - u.min()) / max(u.max() - u.min(), 1e-9)
    return g ** rng.uniform(0.5, 2.0)

def _tex_noise(rng, size):
    field_ = rng.uniform(0.0, 1.0, (size, size))
    sigma = rng.uniform(0.0, 1.2)
    if sigma > 0.05:
        field_ = ndimage.gaussian_filter(field_, sigma, mode="reflect")
    return field_

def _tex_rings(rng, size):
    yy, xx = _grid(size)
    cy, cx = rng.uniform(-0.5, 0.5, 2)
    r = np.hypot(yy - cy, xx - cx)
    f = rng.uniform(1.5, 6.0)
    return 0.5 + 0.5 * np.sin(2 * math.pi * f * r + rng.uniform(0, 2 * math.pi))

def _tex_dots(rng, size):
    yy, xx = _grid(size)
    u, v = _rot(yy, xx, rng.uniform(0, math.pi / 2))
    f = rng.uniform(2.0, 6.0)
    a = 0.5 + 0.5 * np.cos(2 * math.pi * f * u + rng.uniform(0, 2 * math.pi))
    b = 0.5 + 0.5 * np.cos(2 * math.pi * f * v + rng.uniform(0, 2 * math.pi))
    return (a * b) ** rng.uniform(2.0, 4.0)

def _tex_crosshatch(rng, size):
    yy, xx = _grid(size)
    t = rng.uniform(0, math.pi)
    u1, _ = _rot(yy, xx, t)
    u2, _ = _rot(yy, xx, t + math.pi / 2 + rng.uniform(-0.2, 0.2))
    f1, f2 = rng.uniform(1.5, 7.0, 2)
    a = 0.5 + 0.5 * np.sin(2 * math.pi * f1 * u1)
    b = 0.5 + 0.5 * np.sin(2 * math.pi * f2 * u2)
    return np.maximum(a, b)

def _tex_cells(rng, size):
    k = rng.integers(4, 9)
    cy = rng.uniform(-1, 1, k)
    cx = rng.uniform(-1, 1, k)
    levels = rng.uniform(0, 1, k)
    yy, xx = _grid(size)
    d = (yy[..., None] - cy) ** 2 + (xx[..., None] - cx) ** 2
    field_ = levels[np.argmin(d, axis=-1)]
    return ndimage.gaussian_filter(field_, 0.01 * size + 0.5, mode="reflect")

def _tex_waves(rng, size):
    yy, xx = _grid(size)
    u, v = _rot(yy, xx, rng.uniform(0, math.pi))
    f = rng.uniform(2.0, 5.0)
    wobble = rng.uniform(0.3, 0.9) * np.sin(2 * math.pi * rng.uniform(1.0, 2.5) * v)
    return 0.5 + 0.5 * np.sin(2 * math.pi * f * u + wobble)


# The first four families share sharp oscillatory spectra and differ mostly
# in geometry, which keeps few-shot classification from degenerating into
# simple frequency or smoothness statistics.
TEXTURE_FAMILIES = (
    ("stripes", _tex_stripes),
    ("crosshatch", _tex_crosshatch),
    ("rings", _tex_rings),
    ("checker", _tex_checker),
    ("waves", _tex_waves),
    ("blobs", _tex_blobs),
    ("gradient", _tex_gradient),
    ("dots", _tex_dots),
    ("cells", _tex_cells),
    ("noise", _tex_noise),
)


def _class_profile(spec: SynthSpec, class_idx: int):
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, spec.variant, 7919, class_idx]))
    gains = rng.uniform(0.7, 1.0, spec.bands)
    offsets = rng.uniform(0.0, 0.12, spec.bands)
    return gains, offsets

# Nuisance ranges are deliberately wide: a handful of labeled samples cannot
# cover the orientation/frequency/gain/brightness spread, so the few-shot
# problem stays hard while the texture family remains recoverable from many
# unlabeled samples.
def synth_sample_pixels(spec: SynthSpec, class_idx: int, sample_idx: int) -> np.ndarray:
    """Render one sample; pure function of (spec, class index, sample index)."""
    fam_idx = (class_idx + spec.variant) % len(TEXTURE_FAMILIES)
    _, tex = TEXTURE_FAMILIES[fam_idx]
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, spec.variant, class_idx, sample_idx]))
    base = tex(rng, spec.size) ** rng.uniform(0.7, 1.4)
    gains, offsets = _class_profile(spec, class_idx)
    band_jitter = rng.uniform(0.75, 1.25, spec.bands)
    brightness = rng.uniform(0.65, 1.35)
    noise_sigma = rng.uniform(0.05, 0.15)
    pixels = np.empty((spec.bands, spec.size, spec.size), dtype=np.float64)
    for b in range(spec.bands):
        pixels[b] = offsets[b] + base * gains[b] * band_jitter[b] * brightness
    pixels += rng.normal(0.0, noise_sigma, pixels.shape)
    return np.clip(pixels, 0.0, 1.5).astype(np.float32)


def synth_class_names(spec: SynthSpec) -> list[str]:
    names = []
    for c in range(spec.classes):
        fam = TEXTURE_FAMILIES[(c + spec.variant) % len(TEXTURE_FAMILIES)][0]
        rounds = (c + spec.variant) // len(TEXTURE_FAMILIES)
        names.append(fam if rounds == 0 else f"{fam}{rounds + 1}")
    return names


def synth_generate(spec: SynthSpec) -> DatasetManifest:
    """Write a procedural multi-band scene dataset and its manifest.

    Classes come from distinct texture families with intra-class nuisance
    variation (orientation, frequency, per-band gain, brightness, noise).
    Byte-identical output for identical specs.
    """
    if spec.out is None:
        raise ValueError("spec.out must be set to a directory path")
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    class_names = synth_class_names(spec)
    entries = []
    for c in range(spec.classes):
        for j in range(spec.per_class):
            sid = f"{class_names[c]}_{j:04d}"
            rel = f"rasters/{sid}.sslr"
            write_raster(out / rel, synth_sample_pixels(spec, c, j))
            entries.append(ManifestEntry(id=sid, path=rel, label=c))
    manifest = DatasetManifest(
        name=out.name or f"synth{spec.seed}",
        root=out,
        num_classes=spec.classes,
        classes=tuple(class_names),
        entries=tuple(entries),
        bands=tuple(f"band_{i}" for i in range(spec.bands)),
    )
    manifest.validate()
    save_manifest(manifest, out / "manifest.json")
    return manifest


def stable_id_hash(sample_id: str) -> int:
    """32-bit hash of a sample id, stable across processes and runs."""
    return zlib.crc32(sample_id.encode("utf-8"))
