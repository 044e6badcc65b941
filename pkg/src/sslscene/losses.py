"""Reference implementations of the pretext losses, with gradient validation.

These are the framework-independent ground truth for the contrastive loss,
the per-patch position cross-entropy, and the reconstruction loss.  The
training code has its own differentiable versions; tests pin those to the
values produced here.  Everything runs in float64.

Contrastive loss conventions (locked, tested):
  * similarity is cosine with an epsilon guard on the norm product;
  * the denominator of a pair term runs over all 2N embeddings except the
    anchor itself -- the positive IS part of the denominator, which makes
    every pair term non-negative;
  * the batch loss averages the 2N ordered pair terms.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


class LossInputError(ValueError):
    pass


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.5
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.temperature <= 0:
            raise LossInputError(f"temperature must be > 0, got {self.temperature}")
        if self.epsilon <= 0:
            raise LossInputError(f"epsilon must be > 0, got {self.epsilon}")


@dataclass
class EmbeddingBatch:
    """2N embedding vectors with their positive-pair matching.

    pair_of defaults to consecutive pairing (0,1), (2,3), ...
    """

    vectors: np.ndarray  # (2N, d)
    pair_of: np.ndarray | None = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise LossInputError(f"vectors must be 2-D, got shape {self.vectors.shape}")
        n2 = self.vectors.shape[0]
        if n2 < 2 or n2 % 2 != 0:
            raise LossInputError(f"need an even number (>= 2) of vectors, got {n2}")
        if not np.all(np.isfinite(self.vectors)):
            raise LossInputError("embeddings contain non-finite values")
        if self.pair_of is None:
            pair = np.arange(n2)
            pair[0::2] += 1
            pair[1::2] -= 1
            self.pair_of = pair
        else:
            self.pair_of = np.asarray(self.pair_of, dtype=np.int64)
            idx = np.arange(n2)
            if self.pair_of.shape != (n2,) or np.any(self.pair_of == idx) or np.any(
                self.pair_of[self.pair_of] != idx
            ):
                raise LossInputError("pair_of is not a perfect matching")

    @property
    def n_pairs(self) -> int:
        return self.vectors.shape[0] // 2


def cosine_sim(u, v, epsilon: float = 1e-8) -> float:
    """u.v / max(|u||v|, epsilon); 0 when either vector is all-zero."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    denom = max(float(np.linalg.norm(u) * np.linalg.norm(v)), epsilon)
    return float(np.dot(u, v) / denom)


def _similarity_matrix(z: np.ndarray, epsilon: float) -> np.ndarray:
    norms = np.linalg.norm(z, axis=1)
    denom = np.maximum(np.outer(norms, norms), epsilon)
    return (z @ z.T) / denom


def _pair_term(sim: np.ndarray, i: int, j: int, tau: float) -> float:
    # -log softmax over row i excluding the diagonal, evaluated at column j
    row = sim[i] / tau
    mask = np.ones(len(row), dtype=bool)
    mask[i] = False
    shift = row[mask].max()
    logsum = shift + np.log(np.exp(row[mask] - shift).sum())
    return float(logsum - row[j])


def nt_xent_pair(batch: EmbeddingBatch, i: int, j: int, cfg: ContrastiveConfig) -> float:
    """Contrastive term for anchor i with positive j (0-based indices)."""
    if batch.pair_of[i] != j:
        raise LossInputError(f"({i}, {j}) is not a registered positive pair")
    sim = _similarity_matrix(batch.vectors, cfg.epsilon)
    return _pair_term(sim, i, j, cfg.temperature)


def nt_xent_batch(batch: EmbeddingBatch, cfg: ContrastiveConfig) -> float:
    """Minibatch contrastive loss: mean of the 2N ordered pair terms."""
    sim = _similarity_matrix(batch.vectors, cfg.epsilon)
    n2 = batch.vectors.shape[0]
    total = sum(_pair_term(sim, i, int(batch.pair_of[i]), cfg.temperature) for i in range(n2))
    return total / n2


def nt_xent_batch_grad(batch: EmbeddingBatch, cfg: ContrastiveConfig):
    """Batch loss and its analytic gradient with respect to the embeddings."""
    z = batch.vectors
    n2, _ = z.shape
    tau = cfg.temperature
    norms = np.linalg.norm(z, axis=1)
    prod = np.outer(norms, norms)
    denom = np.maximum(prod, cfg.epsilon)
    sim = (z @ z.T) / denom

    logits = sim / tau
    np.fill_diagonal(logits, -np.inf)
    shift = logits.max(axis=1, keepdims=True)
    expl = np.exp(logits - shift)
    softmax = expl / expl.sum(axis=1, keepdims=True)

    pair = batch.pair_of
    loss = 0.0
    onehot = np.zeros_like(sim)
    for i in range(n2):
        loss += float(shift[i, 0] + np.log(expl[i].sum()) - logits[i, pair[i]])
        onehot[i, pair[i]] = 1.0
    loss /= n2

    # dL/dsim, then back through the cosine:
    #   d sim(z_i, z_k) / d z_i = z_k / (n_i n_k) - sim * z_i / n_i^2
    # (second term absent where the epsilon guard is active).
    g = (softmax - onehot) / (tau * n2)
    np.fill_diagonal(g, 0.0)
    a = g + g.T
    guarded = prod <= cfg.epsilon
    term1 = (a / denom) @ z
    a_eff = np.where(guarded, 0.0, a)
    coef = (a_eff * sim).sum(axis=1)
    sq = norms**2
    coef = np.divide(coef, sq, out=np.zeros_like(coef), where=sq > 0)
    grad = term1 - coef[:, None] * z
    return loss, grad


# ---------------------------------------------------------------------------
# Jigsaw position cross-entropy
# ---------------------------------------------------------------------------


def _check_probs(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise LossInputError(f"probs must be 2-D, got shape {probs.shape}")
    if np.any(probs < -1e-12) or np.any(probs > 1.0 + 1e-9):
        raise LossInputError("probabilities outside [0, 1]")
    rows = probs.sum(axis=1)
    if np.any(np.abs(rows - 1.0) > 1e-6):
        raise LossInputError(f"rows must sum to 1 within 1e-6, got sums {rows}")
    return probs


def jigsaw_loss(probs, positions, per_patch_mean: bool = False, epsilon: float = 1e-12) -> float:
    """Sum over patches of -log P(true cell); rows of probs are per-slot softmaxes.

    A zero probability at a true position is clamped to epsilon and flagged
    with a warning rather than raising, so logging a pathological batch does
    not kill a run.
    """
    probs = _check_probs(probs)
    positions = np.asarray(positions, dtype=np.int64)
    s = probs.shape[0]
    if positions.shape != (s,):
        raise LossInputError("positions length must match the number of patch slots")
    picked = probs[np.arange(s), positions]
    if np.any(picked <= 0.0):
        warnings.warn("zero probability at a true position; clamping", RuntimeWarning)
        picked = np.maximum(picked, epsilon)
    total = float(-np.log(picked).sum())
    return total / s if per_patch_mean else total


def softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def jigsaw_loss_from_logits(logits, positions, per_patch_mean: bool = False) -> float:
    return jigsaw_loss(softmax(logits), positions, per_patch_mean=per_patch_mean)


def jigsaw_logits_grad(logits, positions, per_patch_mean: bool = False):
    """Loss and analytic gradient with respect to the pre-softmax logits."""
    logits = np.asarray(logits, dtype=np.float64)
    positions = np.asarray(positions, dtype=np.int64)
    p = softmax(logits)
    s = logits.shape[0]
    picked = np.maximum(p[np.arange(s), positions], 1e-300)
    loss = float(-np.log(picked).sum())
    grad = p.copy()
    grad[np.arange(s), positions] -= 1.0
    if per_patch_mean:
        return loss / s, grad / s
    return loss, grad


# ---------------------------------------------------------------------------
# Inpainting reconstruction loss
# ---------------------------------------------------------------------------


def inpaint_loss(pred, target, mask=None, region: str = "full") -> float:
    """Mean squared error over the full image or over masked pixels only."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise LossInputError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    diff2 = (pred - target) ** 2
    if region == "full":
        return float(diff2.mean())
    if region != "masked":
        raise LossInputError(f"region must be 'full' or 'masked', got {region!r}")
    if mask is None:
        raise LossInputError("region='masked' requires a mask")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != pred.shape[-2:]:
        raise LossInputError(f"mask shape {mask.shape} does not match image {pred.shape[-2:]}")
    count = int(mask.sum())
    if count == 0:
        raise LossInputError("empty mask with region='masked'")
    return float(diff2[..., mask].mean())


def inpaint_loss_grad(pred, target, mask=None, region: str = "full"):
    """Loss and analytic gradient with respect to the prediction."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    value = inpaint_loss(pred, target, mask=mask, region=region)
    if region == "full":
        grad = 2.0 * (pred - target) / pred.size
    else:
        mask = np.asarray(mask, dtype=bool)
        m = pred.shape[0] * int(mask.sum()) if pred.ndim == 3 else int(mask.sum())
        grad = 2.0 * (pred - target) * mask / m
    return value, grad


# ---------------------------------------------------------------------------
# Finite-difference gradient validation
# ---------------------------------------------------------------------------


def grad_check(fn, inputs: np.ndarray, eps: float = 1e-5, mode: str = "central") -> float:
    """Max relative error between fn's analytic gradient and central differences.

    `fn` maps an array to (scalar loss, gradient array of the same shape).
    The relative error denominator is max(|analytic|, |numeric|, 1e-8) per
    element.
    """
    if mode != "central":
        raise LossInputError(f"unsupported mode {mode!r}")
    x = np.asarray(inputs, dtype=np.float64)
    _, analytic = fn(x)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != x.shape:
        raise LossInputError(f"gradient shape {analytic.shape} != input shape {x.shape}")
    numeric = np.zeros_like(x)
    flat = x.reshape(-1)
    num_flat = numeric.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + eps
        up, _ = fn(x)
        flat[idx] = orig - eps
        down, _ = fn(x)
        flat[idx] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise LossInputError(f"non-finite loss at perturbed element {idx}")
        num_flat[idx] = (up - down) / (2.0 * eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
