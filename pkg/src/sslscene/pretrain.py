"""Phase-1 training loops for the three pretext tasks.

One entry point, `pretrain`, wires batch assembly, the differentiable loss
for the chosen task, Adam with a per-step cosine learning-rate schedule,
JSON-line progress logging and periodic checkpoints.  Runs are deterministic
for a fixed seed under single-worker data loading (floating-point caveats of
the platform aside): parameter init comes from the seed, epoch shuffles come
from (seed, epoch), and every augmentation draw comes from (seed, epoch,
sample id).
"""

from __future__ import annotations

import json
import math
import sys
import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch
from torch import nn

from sslscene import augment, datasets
from sslscene.augment import AugmentPolicy, MaskSpec
from sslscene.datasets import DatasetManifest
from sslscene.models import (
    CompositeModel,
    EncoderConfig,
    HeadConfig,
    ModelCheckpoint,
    attach_head,
    build_encoder,
    checkpoint_of,
    save_checkpoint,
)

PRETEXT_TASKS = ("inpainting", "jigsaw", "instance")


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class PretrainConfig:
    task: str
    epochs: int = 100
    batch_size: int = 64
    base_lr: float = 1e-3
    tau: float = 0.5  # instance task
    projection_dim: int = 64  # instance task
    grid: tuple[int, int] = (3, 3)  # jigsaw task
    gap: int = 0  # jigsaw task
    mask: MaskSpec = field(default_factory=MaskSpec)  # inpainting task
    inpaint_region: str = "masked"  # "masked" | "full"
    policy: AugmentPolicy = field(default_factory=AugmentPolicy)  # instance task
    seed: int = 0
    checkpoint_every: int = 0  # epochs; 0 disables periodic checkpoints
    weight_decay: float = 0.0
    warmup_steps: int = 0

    def __post_init__(self):
        if self.task not in PRETEXT_TASKS:
            raise ValueError(f"unknown pretext task {self.task!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.task == "instance" and self.batch_size < 2:
            raise ValueError("instance discrimination needs batch_size >= 2")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "base_lr": self.base_lr,
            "tau": self.tau,
            "projection_dim": self.projection_dim,
            "grid": list(self.grid),
            "gap": self.gap,
            "mask": self.mask.to_json(),
            "inpaint_region": self.inpaint_region,
            "policy": self.policy.to_json(),
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
            "weight_decay": self.weight_decay,
            "warmup_steps": self.warmup_steps,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PretrainConfig":
        kwargs = dict(doc)
        if "grid" in kwargs:
            kwargs["grid"] = tuple(kwargs["grid"])
        if "mask" in kwargs and isinstance(kwargs["mask"], dict):
            kwargs["mask"] = MaskSpec.from_json(kwargs["mask"])
        if "policy" in kwargs and isinstance(kwargs["policy"], dict):
            kwargs["policy"] = AugmentPolicy.from_json(kwargs["policy"])
        return cls(**kwargs)


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """base_lr * 0.5 * (1 + cos(pi * step / total_steps))."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if not (0 <= step <= total_steps):
        raise ValueError(f"step {step} out of range [0, {total_steps}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def _scheduled_lr(step: int, total: int, base_lr: float, warmup_steps: int = 0) -> float:
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    return cosine_lr(step - warmup_steps, max(total - warmup_steps, 1), base_lr)


# ---------------------------------------------------------------------------
# Differentiable batch losses (values pinned to sslscene.losses in the tests)
# ---------------------------------------------------------------------------


def nt_xent_torch(z: torch.Tensor, tau: float, eps: float = 1e-8) -> torch.Tensor:
    """Contrastive loss over consecutively paired rows of z (2N, d)."""
    n2 = z.shape[0]
    if n2 % 2 != 0 or n2 < 4:
        raise ValueError("need an even number (>= 4) of views for a contrastive batch")
    norms = z.norm(dim=1)
    denom = torch.clamp(norms[:, None] * norms[None, :], min=eps)
    sim = (z @ z.T) / denom / tau
    self_mask = torch.eye(n2, dtype=torch.bool, device=z.device)
    # each anchor competes against its positive and the 2(N-1) other views
    assert int((~self_mask).sum(dim=1)[0]) == n2 - 1
    sim = sim.masked_fill(self_mask, float("-inf"))
    targets = torch.arange(n2, device=z.device)
    targets = torch.where(targets % 2 == 0, targets + 1, targets - 1)
    return nn.functional.cross_entropy(sim, targets)


def jigsaw_loss_torch(logits: torch.Tensor, positions: torch.Tensor, batch: int) -> torch.Tensor:
    """Per-sample sum of position cross-entropies, averaged over the batch."""
    return nn.functional.cross_entropy(logits, positions, reduction="sum") / batch


def inpaint_loss_torch(
    pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor, region: str
) -> torch.Tensor:
    """Reconstruction MSE per sample (full image or masked pixels), batch-averaged."""
    diff2 = (pred - target) ** 2
    if region == "full":
        return diff2.mean()
    m = mask[:, None, :, :].to(diff2.dtype)
    per_sample = (diff2 * m).sum(dim=(1, 2, 3)) / (m.sum(dim=(1, 2, 3)) * pred.shape[1])
    return per_sample.mean()


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


class SampleCache:
    """Read-through pixel cache keyed by sample id."""

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest
        self._pixels: dict[str, np.ndarray] = {}

    def pixels(self, sample_id: str) -> np.ndarray:
        got = self._pixels.get(sample_id)
        if got is None:
            got = datasets.read_sample(self.manifest, sample_id).pixels
            self._pixels[sample_id] = got
        return got


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed & 0xFFFFFFFF, epoch]).generate_state(1)[0])


def _log_line(stream, payload: dict) -> None:
    if stream is not None:
        stream.write(json.dumps(payload) + "\n")
        stream.flush()


def _build_task_model(encoder_cfg: EncoderConfig, cfg: PretrainConfig, in_bands: int) -> CompositeModel:
    encoder = build_encoder(encoder_cfg, cfg.seed)
    if cfg.task == "instance":
        head = HeadConfig(kind="projection", out_dim=cfg.projection_dim)
    elif cfg.task == "jigsaw":
        m, n = cfg.grid
        head = HeadConfig(kind="jigsaw-position", out_dim=m * n)
    else:
        head = HeadConfig(kind="inpaint-decoder", out_dim=in_bands)
    return attach_head(encoder, head, cfg.seed)


def _instance_batch(cache, ids, policy, epoch_seed):
    samples = [datasets.RasterSample(i, cache.pixels(i), []) for i in ids]
    vb = augment.batch_views(samples, policy, epoch_seed)
    return torch.from_numpy(vb.views)


def _inpaint_batch(cache, ids, mask_spec, epoch_seed):
    corrupted, masks, originals = [], [], []
    for i in ids:
        pix = cache.pixels(i)
        cor, msk = augment.corrupt(datasets.RasterSample(i, pix, []), mask_spec, epoch_seed)
        corrupted.append(cor)
        masks.append(msk)
        originals.append(pix)
    return (
        torch.from_numpy(np.stack(corrupted)),
        torch.from_numpy(np.stack(masks)),
        torch.from_numpy(np.stack(originals).astype(np.float32)),
    )


def _jigsaw_batch(cache, ids, grid, gap, epoch_seed):
    patches, positions = [], []
    for i in ids:
        inst = augment.make_jigsaw(datasets.RasterSample(i, cache.pixels(i), []), grid, gap, epoch_seed)
        patches.append(inst.patches)
        positions.append(inst.positions)
    return (
        torch.from_numpy(np.concatenate(patches)),
        torch.from_numpy(np.concatenate(positions)),
    )


def pretrain(
    manifest: DatasetManifest,
    encoder_cfg: EncoderConfig,
    cfg: PretrainConfig,
    out_dir=None,
    log_stream=sys.stderr,
    on_step=None,
) -> ModelCheckpoint:
    """Train an encoder on the pretext task over the manifest's pretrain split.

    Returns the final checkpoint; with `out_dir` set, also writes checkpoints
    every `checkpoint_every` epochs and at the end.  `on_step(step, lr, loss)`
    is called after every optimizer step (used by tests to pin the schedule).
    """
    ids = list(manifest.split_ids("pretrain"))
    if not ids:
        raise ValueError("manifest has an empty pretrain split")
    in_bands = datasets.band_count(manifest)
    if encoder_cfg.in_bands != in_bands:
        raise ValueError(
            f"encoder expects {encoder_cfg.in_bands} bands but dataset has {in_bands}"
        )

    model = _build_task_model(encoder_cfg, cfg, in_bands)
    model.train()
    optimizer = torch.optim.Adam(
        model.parameters(), lr=cfg.base_lr, betas=(0.9, 0.999), weight_decay=cfg.weight_decay
    )
    cache = SampleCache(manifest)

    min_batch = 2 if cfg.task == "instance" else 1
    batches_per_epoch = [
        len(ids[k : k + cfg.batch_size])
        for k in range(0, len(ids), cfg.batch_size)
        if len(ids[k : k + cfg.batch_size]) >= min_batch
    ]
    steps_per_epoch = len(batches_per_epoch)
    if steps_per_epoch == 0:
        raise ValueError("pretrain split smaller than the minimum batch for this task")
    total_steps = cfg.epochs * steps_per_epoch

    def make_meta(epoch: int) -> dict:
        return {
            "task": cfg.task,
            "epoch": epoch,
            "seed": cfg.seed,
            "dataset_fingerprint": manifest.fingerprint(),
            "pretrain_config": cfg.to_json(),
        }

    step = 0
    mean_loss = float("nan")
    for epoch in range(cfg.epochs):
        t0 = time.monotonic()
        eseed = _epoch_seed(cfg.seed, epoch)
        order = np.random.default_rng(eseed).permutation(len(ids))
        epoch_losses = []
        for k in range(0, len(ids), cfg.batch_size):
            batch_ids = [ids[j] for j in order[k : k + cfg.batch_size]]
            if len(batch_ids) < min_batch:
                continue
            lr = _scheduled_lr(step, total_steps, cfg.base_lr, cfg.warmup_steps)
            for group in optimizer.param_groups:
                group["lr"] = lr
            optimizer.zero_grad()
            if cfg.task == "instance":
                views = _instance_batch(cache, batch_ids, cfg.policy, eseed)
                loss = nt_xent_torch(model(views), cfg.tau)
            elif cfg.task == "jigsaw":
                patches, positions = _jigsaw_batch(cache, batch_ids, cfg.grid, cfg.gap, eseed)
                loss = jigsaw_loss_torch(model(patches), positions, len(batch_ids))
            else:
                corrupted, masks, originals = _inpaint_batch(cache, batch_ids, cfg.mask, eseed)
                loss = inpaint_loss_torch(model(corrupted), originals, masks, cfg.inpaint_region)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise DivergenceError(
                    f"non-finite {cfg.task} loss at epoch {epoch} step {step} (lr={lr:.3g})"
                )
            loss.backward()
            optimizer.step()
            epoch_losses.append(value)
            if on_step is not None:
                on_step(step, lr, value)
            step += 1
        mean_loss = float(np.mean(epoch_losses))
        _log_line(
            log_stream,
            {
                "epoch": epoch,
                "mean_loss": round(mean_loss, 6),
                "lr": lr,
                "wall_seconds": round(time.monotonic() - t0, 3),
            },
        )
        if out_dir is not None and cfg.checkpoint_every > 0 and (epoch + 1) % cfg.checkpoint_every == 0:
            ckpt = checkpoint_of(model, **make_meta(epoch + 1))
            save_checkpoint(ckpt, None, f"{out_dir}/epoch_{epoch + 1:04d}")

    final = checkpoint_of(model, **make_meta(cfg.epochs))
    final.meta["final_mean_loss"] = mean_loss
    if out_dir is not None:
        save_checkpoint(final, None, f"{out_dir}/final")
    return final
