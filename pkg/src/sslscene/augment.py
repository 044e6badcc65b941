"""Stochastic view construction, masking for inpainting, and jigsaw shuffling.

Every operation here is a pure function of (sample, config, seed): the
per-sample random stream is derived from the seed and a stable hash of the
sample id, so batches can be rebuilt identically regardless of worker count
or iteration order.  All operations preserve the band count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from sslscene.datasets import RasterSample, stable_id_hash


class AugmentError(ValueError):
    pass


def _pixels(sample) -> np.ndarray:
    """Accept a RasterSample or a bare (C,H,W) array."""
    if isinstance(sample, RasterSample):
        arr = sample.pixels
    else:
        arr = np.asarray(sample)
    if arr.ndim != 3:
        raise AugmentError(f"expected (C,H,W) pixels, got shape {arr.shape}")
    return arr


def _sample_id(sample) -> str:
    return sample.id if isinstance(sample, RasterSample) else ""


def _rng_for(seed: int, sample_id: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, stable_id_hash(sample_id)]))


@dataclass(frozen=True)
class AugmentPolicy:
    """View-construction policy for instance discrimination.

    Random resized crop, both flips (overhead imagery has no canonical up),
    per-band multiplicative jitter, and optional Gaussian blur.
    """

    crop_scale_range: tuple[float, float] = (0.2, 1.0)
    flip_h: float = 0.5
    flip_v: float = 0.5
    band_jitter: float = 0.4
    blur_prob: float = 0.5
    blur_sigma_range: tuple[float, float] = (0.1, 2.0)
    output_size: tuple[int, int] | None = None  # None: keep input H, W

    def __post_init__(self):
        lo, hi = self.crop_scale_range
        if not (0.0 < lo <= hi <= 1.0):
            raise AugmentError(f"bad crop_scale_range {self.crop_scale_range}")
        for p in (self.flip_h, self.flip_v, self.blur_prob):
            if not (0.0 <= p <= 1.0):
                raise AugmentError(f"probability out of [0,1]: {p}")
        if self.band_jitter < 0:
            raise AugmentError("band_jitter must be >= 0")

    def to_json(self) -> dict:
        return {
            "crop_scale_range": list(self.crop_scale_range),
            "flip_h": self.flip_h,
            "flip_v": self.flip_v,
            "band_jitter": self.band_jitter,
            "blur_prob": self.blur_prob,
            "blur_sigma_range": list(self.blur_sigma_range),
            "output_size": list(self.output_size) if self.output_size else None,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "AugmentPolicy":
        kwargs = dict(doc)
        for key in ("crop_scale_range", "blur_sigma_range"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        if kwargs.get("output_size") is not None:
            kwargs["output_size"] = tuple(kwargs["output_size"])
        return cls(**kwargs)


@dataclass(frozen=True)
class MaskSpec:
    """Geometry of the corruption mask for the inpainting task."""

    coverage_range: tuple[float, float] = (0.15, 0.35)
    shape: str = "rectangle"  # "rectangle" | "multi-rect"
    rect_count: int = 1
    fill: str = "mean"  # "mean" | "zero"

    def __post_init__(self):
        lo, hi = self.coverage_range
        if not (0.0 < lo <= hi < 1.0):
            raise AugmentError(f"coverage_range must satisfy 0 < lo <= hi < 1, got {self.coverage_range}")
        if self.shape not in ("rectangle", "multi-rect"):
            raise AugmentError(f"unknown mask shape {self.shape!r}")
        if self.shape == "multi-rect" and self.rect_count < 2:
            raise AugmentError("multi-rect needs rect_count >= 2")
        if self.fill not in ("mean", "zero"):
            raise AugmentError(f"unknown fill {self.fill!r}")

    def to_json(self) -> dict:
        return {
            "coverage_range": list(self.coverage_range),
            "shape": self.shape,
            "rect_count": self.rect_count,
            "fill": self.fill,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "MaskSpec":
        kwargs = dict(doc)
        if "coverage_range" in kwargs:
            kwargs["coverage_range"] = tuple(kwargs["coverage_range"])
        return cls(**kwargs)


@dataclass
class ViewBatch:
    """2N augmented views with their positive-pair structure.

    Views 2i and 2i+1 (0-based) come from sample i; pair_of is a perfect
    matching with pair_of[pair_of[i]] == i and pair_of[i] != i.
    """

    views: np.ndarray  # (2N, C, H', W') float32
    pair_of: np.ndarray  # (2N,) int
    source_ids: list[str]

    def __post_init__(self):
        self.pair_of = np.asarray(self.pair_of, dtype=np.int64)
        n2 = self.views.shape[0]
        if n2 != len(self.pair_of) or n2 != 2 * len(self.source_ids):
            raise AugmentError("inconsistent ViewBatch sizes")
        if np.any(self.pair_of == np.arange(n2)) or np.any(self.pair_of[self.pair_of] != np.arange(n2)):
            raise AugmentError("pair_of is not a perfect matching")


@dataclass
class JigsawInstance:
    """Shuffled patch grid; positions[s] is the true grid cell of slot s."""

    patches: np.ndarray  # (m*n, C, h, w) float32
    positions: np.ndarray  # (m*n,) int, a permutation
    grid: tuple[int, int]
    gap: int = 0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.int64)
        m, n = self.grid
        if sorted(self.positions.tolist()) != list(range(m * n)):
            raise AugmentError("positions is not a permutation of the grid cells")
        if self.patches.shape[0] != m * n:
            raise AugmentError("patch count does not match grid")


# ---------------------------------------------------------------------------
# Views
# ---------------------------------------------------------------------------


def _crop_window(rng, h, w, scale_range):
    lo, hi = scale_range
    area = h * w
    log_ratio = (np.log(3.0 / 4.0), np.log(4.0 / 3.0))
    for _ in range(10):
        target = area * rng.uniform(lo, hi)
        ratio = np.exp(rng.uniform(*log_ratio))
        ch = int(round(np.sqrt(target / ratio)))
        cw = int(round(np.sqrt(target * ratio)))
        if 0 < ch <= h and 0 < cw <= w:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            return top, left, ch, cw
    return 0, 0, h, w  # fall back to the full window


def _bilinear_resize(img: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Resize (C,H,W) with half-pixel-centre bilinear sampling, separably."""
    c, h, w = img.shape
    oh, ow = out_hw
    if oh < 1 or ow < 1:
        raise AugmentError(f"degenerate output size {out_hw}")
    if (oh, ow) == (h, w):
        return img.copy()
    ys = (np.arange(oh) + 0.5) * (h / oh) - 0.5
    xs = (np.arange(ow) + 0.5) * (w / ow) - 0.5
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0).astype(img.dtype)[None, :, None]
    wx = np.clip(xs - x0, 0.0, 1.0).astype(img.dtype)[None, None, :]
    rows = img[:, y0, :] * (1 - wy) + img[:, y1, :] * wy
    return rows[:, :, x0] * (1 - wx) + rows[:, :, x1] * wx


def _one_view(rng, pixels: np.ndarray, policy: AugmentPolicy) -> np.ndarray:
    c, h, w = pixels.shape
    out_hw = policy.output_size or (h, w)
    top, left, ch, cw = _crop_window(rng, h, w, policy.crop_scale_range)
    view = _bilinear_resize(pixels[:, top : top + ch, left : left + cw], out_hw)
    if rng.uniform() < policy.flip_h:
        view = view[:, :, ::-1]
    if rng.uniform() < policy.flip_v:
        view = view[:, ::-1, :]
    if policy.band_jitter > 0:
        gains = rng.uniform(1.0 - policy.band_jitter, 1.0 + policy.band_jitter, c)
        view = view * gains[:, None, None].astype(view.dtype)
    if policy.blur_prob > 0 and rng.uniform() < policy.blur_prob:
        sigma = rng.uniform(*policy.blur_sigma_range)
        view = ndimage.gaussian_filter(view, (0, sigma, sigma), mode="reflect", truncate=2.0)
    return np.ascontiguousarray(view, dtype=np.float32)


def make_views(sample, policy: AugmentPolicy, seed: int):
    """Two independent stochastic draws of the policy applied to one sample."""
    pixels = _pixels(sample)
    _, h, w = pixels.shape
    oh, ow = policy.output_size or (h, w)
    if oh > h * 4 or ow > w * 4:
        raise AugmentError(f"output size {policy.output_size} too large for {h}x{w} input")
    rng = _rng_for(seed, _sample_id(sample))
    return _one_view(rng, pixels, policy), _one_view(rng, pixels, policy)


def batch_views(samples: Sequence, policy: AugmentPolicy, seed: int) -> ViewBatch:
    """Augment N samples into a paired batch of 2N views."""
    if len(samples) < 1:
        raise AugmentError("empty batch")
    views = []
    ids = []
    for s in samples:
        a, b = make_views(s, policy, seed)
        views.extend((a, b))
        ids.append(_sample_id(s))
    n2 = len(views)
    pair_of = np.arange(n2)
    pair_of[0::2] += 1
    pair_of[1::2] -= 1
    return ViewBatch(views=np.stack(views), pair_of=pair_of, source_ids=ids)


# ---------------------------------------------------------------------------
# Inpainting corruption
# ---------------------------------------------------------------------------


def _feasible_rectangle(rng, h, w, lo_px, hi_px):
    heights = np.arange(1, h + 1)
    w_min = np.ceil(lo_px / heights).astype(np.int64)
    w_max = np.minimum(w, hi_px // heights)
    ok = (w_min <= w_max) & (w_min >= 1)
    if not np.any(ok):
        raise AugmentError(f"no rectangle within pixel budget [{lo_px}, {hi_px}] fits {h}x{w}")
    rh = int(rng.choice(heights[ok]))
    rw = int(rng.integers(max(1, int(np.ceil(lo_px / rh))), min(w, hi_px // rh) + 1))
    top = int(rng.integers(0, h - rh + 1))
    left = int(rng.integers(0, w - rw + 1))
    return top, left, rh, rw


def corrupt(sample, spec: MaskSpec, seed: int):
    """Mask a region of the image; returns (corrupted, mask).

    The mask always covers a pixel fraction inside coverage_range.  The
    corrupted image equals the input outside the mask and the fill value
    (per-band mean or zero) inside it.
    """
    pixels = _pixels(sample)
    c, h, w = pixels.shape
    lo, hi = spec.coverage_range
    total = h * w
    lo_px = int(np.ceil(lo * total - 1e-9))
    hi_px = int(np.floor(hi * total + 1e-9))
    if lo_px < 1 or lo_px > hi_px:
        raise AugmentError(f"infeasible coverage {spec.coverage_range} for {h}x{w} image")
    rng = _rng_for(seed, _sample_id(sample))
    mask = np.zeros((h, w), dtype=bool)
    if spec.shape == "rectangle":
        top, left, rh, rw = _feasible_rectangle(rng, h, w, lo_px, hi_px)
        mask[top : top + rh, left : left + rw] = True
    else:
        placed = False
        for _ in range(200):
            trial = np.zeros((h, w), dtype=bool)
            budget = int(rng.integers(lo_px, hi_px + 1))
            parts = np.maximum(1, rng.multinomial(budget, np.ones(spec.rect_count) / spec.rect_count))
            for part in parts:
                t, l_, rh, rw = _feasible_rectangle(rng, h, w, min(part, hi_px), min(part, hi_px))
                trial[t : t + rh, l_ : l_ + rw] = True
            if lo_px <= trial.sum() <= hi_px:
                mask = trial
                placed = True
                break
        if not placed:
            raise AugmentError(
                f"could not place {spec.rect_count} rectangles within coverage {spec.coverage_range}"
            )
    if spec.fill == "zero":
        fill = np.zeros(c, dtype=pixels.dtype)
    else:
        fill = pixels.reshape(c, -1).mean(axis=1)
    corrupted = np.where(mask[None, :, :], fill[:, None, None], pixels).astype(np.float32)
    return corrupted, mask


# ---------------------------------------------------------------------------
# Jigsaw
# ---------------------------------------------------------------------------


def make_jigsaw(sample, grid: tuple[int, int], gap: int = 0, seed: int = 0) -> JigsawInstance:
    """Cut a row-major m*n patch grid, trim `gap` per edge, shuffle uniformly."""
    pixels = _pixels(sample)
    c, h, w = pixels.shape
    m, n = grid
    if m < 1 or n < 1:
        raise AugmentError(f"bad grid {grid}")
    cell_h, cell_w = h // m, w // n
    ph, pw = cell_h - 2 * gap, cell_w - 2 * gap
    if ph < 1 or pw < 1:
        raise AugmentError(f"grid {grid} with gap {gap} does not fit a {h}x{w} image")
    cells = []
    for i in range(m):
        for j in range(n):
            top = i * cell_h + gap
            left = j * cell_w + gap
            cells.append(pixels[:, top : top + ph, left : left + pw])
    rng = _rng_for(seed, _sample_id(sample))
    perm = rng.permutation(m * n)
    patches = np.stack([cells[p] for p in perm]).astype(np.float32)
    return JigsawInstance(patches=patches, positions=perm, grid=grid, gap=gap)


def reassemble(instance: JigsawInstance) -> np.ndarray:
    """Place each shuffled patch back at its recorded cell.

    Exact inverse of make_jigsaw when gap=0 and the grid divides the image;
    with gap > 0 the trimmed margins come back as zeros.
    """
    m, n = instance.grid
    mn, c, ph, pw = instance.patches.shape
    cell_h, cell_w = ph + 2 * instance.gap, pw + 2 * instance.gap
    out = np.zeros((c, m * cell_h, n * cell_w), dtype=instance.patches.dtype)
    for s in range(mn):
        pos = int(instance.positions[s])
        i, j = divmod(pos, n)
        top = i * cell_h + instance.gap
        left = j * cell_w + instance.gap
        out[:, top : top + ph, left : left + pw] = instance.patches[s]
    return out
