"""Phase-2: few-shot fine-tuning of a pretrained encoder, plus baselines.

Three protocols: `linear` trains one affine layer on frozen-encoder
embeddings, `full` unfreezes everything, and `scratch` trains a fresh
encoder end-to-end while ignoring any checkpoint.  The frozen-encoder
guarantee of linear mode is bitwise: the encoder's parameter tensors are
identical before and after.
"""

from __future__ import annotations

import json
import sys
import time
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from sslscene import datasets
from sslscene.datasets import DatasetManifest, RasterSample
from sslscene.models import (
    CompositeModel,
    Encoder,
    EncoderConfig,
    HeadConfig,
    ModelCheckpoint,
    attach_head,
    build_encoder,
    checkpoint_of,
)
from sslscene.pretrain import SampleCache, _epoch_seed, _scheduled_lr, DivergenceError

TRANSFER_MODES = ("linear", "full", "scratch")


class SplitShapeError(ValueError):
    pass


@dataclass(frozen=True)
class TransferConfig:
    mode: str = "linear"
    shots: int = 5
    epochs: int = 100
    batch_size: int = 64
    base_lr: float | None = None  # default 1e-2 for linear heads, 1e-3 end-to-end
    seed: int = 0
    weight_decay: float = 0.0
    warmup_steps: int = 0

    def __post_init__(self):
        if self.mode not in TRANSFER_MODES:
            raise ValueError(f"unknown transfer mode {self.mode!r}")
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    @property
    def lr(self) -> float:
        if self.base_lr is not None:
            return self.base_lr
        return 1e-2 if self.mode == "linear" else 1e-3

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "shots": self.shots,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "base_lr": self.base_lr,
            "seed": self.seed,
            "weight_decay": self.weight_decay,
            "warmup_steps": self.warmup_steps,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TransferConfig":
        return cls(**doc)


def _check_finetune_split(manifest: DatasetManifest, shots: int) -> list[str]:
    ids = list(manifest.split_ids("finetune"))
    if not ids:
        raise SplitShapeError("manifest has no finetune split; run the few-shot sampler first")
    test = set(manifest.split_ids("test"))
    overlap = test.intersection(ids)
    if overlap:
        raise SplitShapeError(f"finetune split leaks into test: {sorted(overlap)[:4]}")
    counts = {c: 0 for c in range(manifest.num_classes)}
    for i in ids:
        label = manifest.entry(i).label
        if label is None:
            raise SplitShapeError(f"finetune sample {i!r} has no label")
        counts[label] += 1
    bad = {manifest.classes[c]: n for c, n in counts.items() if n != shots}
    if bad:
        raise SplitShapeError(f"finetune split is not {shots}-shot per class: {bad}")
    return ids


def _encoder_from_checkpoint(checkpoint: ModelCheckpoint) -> Encoder:
    model = checkpoint.build_model(strip_head=True)
    if not isinstance(model, Encoder):
        raise ValueError("checkpoint does not contain an encoder")
    return model


def _train_classifier(
    inputs, labels, model, trainable, cfg: TransferConfig, forward, log_stream
) -> None:
    """Shared loop: Adam over `trainable`, per-step cosine schedule, CE loss."""
    n = inputs.shape[0]
    batch = max(1, min(cfg.batch_size, n))
    steps_per_epoch = max(1, n // batch)
    total_steps = cfg.epochs * steps_per_epoch
    optimizer = torch.optim.Adam(trainable, lr=cfg.lr, weight_decay=cfg.weight_decay)
    step = 0
    for epoch in range(cfg.epochs):
        t0 = time.monotonic()
        order = np.random.default_rng(_epoch_seed(cfg.seed, epoch)).permutation(n)
        losses = []
        for k in range(0, steps_per_epoch * batch, batch):
            idx = torch.from_numpy(order[k : k + batch])
            lr = _scheduled_lr(step, total_steps, cfg.lr, cfg.warmup_steps)
            for group in optimizer.param_groups:
                group["lr"] = lr
            optimizer.zero_grad()
            logits = forward(inputs[idx])
            loss = nn.functional.cross_entropy(logits, labels[idx])
            value = float(loss.detach())
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite fine-tuning loss at epoch {epoch}")
            loss.backward()
            optimizer.step()
            losses.append(value)
            step += 1
        if log_stream is not None:
            log_stream.write(
                json.dumps(
                    {
                        "epoch": epoch,
                        "mean_loss": round(float(np.mean(losses)), 6),
                        "lr": lr,
                        "wall_seconds": round(time.monotonic() - t0, 3),
                    }
                )
                + "\n"
            )
            log_stream.flush()


def finetune(
    checkpoint: ModelCheckpoint | None,
    manifest: DatasetManifest,
    cfg: TransferConfig,
    encoder_cfg: EncoderConfig | None = None,
    log_stream=sys.stderr,
) -> ModelCheckpoint:
    """Fit a classifier on the manifest's few-shot finetune split.

    linear: freeze the checkpoint encoder, train only the affine layer on its
    embeddings.  full: start from the checkpoint and update everything.
    scratch: ignore the checkpoint, train a fresh encoder (encoder_cfg
    required unless a checkpoint supplies the architecture).
    """
    ids = _check_finetune_split(manifest, cfg.shots)
    if cfg.mode != "scratch" and checkpoint is None:
        raise ValueError(f"mode {cfg.mode!r} requires a pretrained checkpoint")

    cache = SampleCache(manifest)
    images = torch.from_numpy(np.stack([cache.pixels(i) for i in ids]).astype(np.float32))
    labels = torch.tensor(manifest.labels_of(ids), dtype=torch.long)

    if cfg.mode == "scratch":
        if encoder_cfg is None:
            if checkpoint is None:
                raise ValueError("scratch mode needs encoder_cfg")
            encoder_cfg = EncoderConfig.from_json(checkpoint.meta["encoder"])
        encoder = build_encoder(encoder_cfg, cfg.seed)
    else:
        encoder = _encoder_from_checkpoint(checkpoint)
    if manifest.num_classes < 2:
        raise SplitShapeError("need at least two classes to fit a classifier")
    head_cfg = HeadConfig(kind="linear-classifier", out_dim=manifest.num_classes)
    model = attach_head(encoder, head_cfg, cfg.seed)

    if cfg.mode == "linear":
        encoder.eval()
        for p in encoder.parameters():
            p.requires_grad_(False)
        with torch.no_grad():
            embeddings = encoder(images)
        _train_classifier(
            embeddings, labels, model, model.head.parameters(), cfg, model.head, log_stream
        )
    else:
        model.train()
        _train_classifier(
            images, labels, model, model.parameters(), cfg, model, log_stream
        )

    model.eval()
    meta = {
        "task": "classification",
        "mode": cfg.mode,
        "shots": cfg.shots,
        "seed": cfg.seed,
        "num_classes": manifest.num_classes,
        "classes": list(manifest.classes),
        "dataset_fingerprint": manifest.fingerprint(),
        "transfer_config": cfg.to_json(),
    }
    if checkpoint is not None and cfg.mode != "scratch":
        meta["base_checkpoint_fingerprint"] = checkpoint.meta.get("dataset_fingerprint")
        meta["base_pretext_task"] = checkpoint.meta.get("task")
    return checkpoint_of(model, **meta)


def predict(checkpoint: ModelCheckpoint, samples: list[RasterSample], batch_size: int = 64) -> list[int]:
    """Argmax class index per sample, in input order; deterministic (eval mode)."""
    if not checkpoint.meta.get("head") or checkpoint.meta["head"].get("kind") != "linear-classifier":
        raise ValueError("checkpoint does not contain a classifier head")
    model = checkpoint.build_model()
    model.eval()
    out: list[int] = []
    for k in range(0, len(samples), batch_size):
        chunk = samples[k : k + batch_size]
        x = torch.from_numpy(np.stack([s.pixels for s in chunk]).astype(np.float32))
        with torch.no_grad():
            logits = model(x)
        out.extend(int(i) for i in logits.argmax(dim=1))
    return out


def predict_manifest(
    checkpoint: ModelCheckpoint, manifest: DatasetManifest, split: str = "test"
) -> tuple[list[int], list[int]]:
    """Predictions and true labels for one split of a manifest."""
    ids = manifest.split_ids(split)
    if not ids:
        raise SplitShapeError(f"manifest has an empty {split!r} split")
    samples = [datasets.read_sample(manifest, i) for i in ids]
    preds = predict(checkpoint, samples)
    return preds, manifest.labels_of(ids)
