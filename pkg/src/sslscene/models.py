"""Configurable residual encoder, task heads, and checkpoint serialization.

The encoder maps (B, C, H, W) to a fixed-length embedding through a strided
stem, a few residual stages, global average pooling and a linear projection.
It is deliberately small: the two-phase paradigm, not the backbone, is what
this package exercises, and the default trains on a CPU in minutes.

Checkpoints are directories: `meta.json` describes the architecture and
training state, `params/<dotted.path>.bin` holds one little-endian float32
blob per tensor (magic "SSLP", u32 rank, u32 dims), and `checksums.json`
carries a CRC32 per file so corruption is detected at load time.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

PARAM_MAGIC = b"SSLP"
CHECKPOINT_VERSION = 1

HEAD_KINDS = ("projection", "inpaint-decoder", "jigsaw-position", "linear-classifier")


class CheckpointError(Exception):
    pass


class ChecksumMismatchError(CheckpointError):
    pass


class ModelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    in_bands: int
    widths: tuple[int, ...] = (32, 64, 128)
    blocks_per_stage: int = 2
    embedding_dim: int = 128
    norm: str = "batch"  # "batch" | "group"
    activation: str = "relu"  # "relu" | "leaky_relu" | "gelu"
    stem_stride: int = 2
    stem_pool: bool = True

    def __post_init__(self):
        if self.in_bands < 1:
            raise ModelConfigError("in_bands must be >= 1")
        if not self.widths:
            raise ModelConfigError("widths must be non-empty")
        if self.embedding_dim < 8:
            raise ModelConfigError("embedding_dim must be >= 8")
        if self.norm not in ("batch", "group"):
            raise ModelConfigError(f"unknown norm {self.norm!r}")
        if self.activation not in ("relu", "leaky_relu", "gelu"):
            raise ModelConfigError(f"unknown activation {self.activation!r}")

    def to_json(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_json(cls, doc: dict) -> "EncoderConfig":
        kwargs = dict(doc)
        kwargs["widths"] = tuple(kwargs["widths"])
        return cls(**kwargs)

    @property
    def downsample_factor(self) -> int:
        f = self.stem_stride * (2 if self.stem_pool else 1)
        return f * 2 ** (len(self.widths) - 1)


def desk_encoder_config(in_bands: int) -> EncoderConfig:
    """Small preset sized for CPU experiments; the constructor default is the
    full-size one for users with accelerators."""
    return EncoderConfig(
        in_bands=in_bands, widths=(16, 32, 64), blocks_per_stage=1, embedding_dim=64
    )


@dataclass(frozen=True)
class HeadConfig:
    kind: str
    out_dim: int
    hidden_dim: int | None = None  # projection head only; defaults to encoder dim

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise ModelConfigError(f"unknown head kind {self.kind!r}")
        if self.out_dim < 1:
            raise ModelConfigError("out_dim must be >= 1")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "HeadConfig":
        return cls(**doc)


def _make_norm(kind: str, channels: int) -> nn.Module:
    if kind == "batch":
        return nn.BatchNorm2d(channels)
    groups = 8
    while channels % groups != 0:
        groups //= 2
    return nn.GroupNorm(max(groups, 1), channels)


def _make_act(kind: str) -> nn.Module:
    if kind == "relu":
        return nn.ReLU(inplace=True)
    if kind == "leaky_relu":
        return nn.LeakyReLU(0.1, inplace=True)
    return nn.GELU()


class ResidualBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int, norm: str, act: str):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.norm1 = _make_norm(norm, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.norm2 = _make_norm(norm, cout)
        self.act = _make_act(act)
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride=stride, bias=False), _make_norm(norm, cout)
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        out = self.act(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        return self.act(out + self.shortcut(x))


class Encoder(nn.Module):
    """C x H x W -> embedding, via residual stages and global average pooling."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        stem = [
            nn.Conv2d(cfg.in_bands, cfg.widths[0], 3, stride=cfg.stem_stride, padding=1, bias=False),
            _make_norm(cfg.norm, cfg.widths[0]),
            _make_act(cfg.activation),
        ]
        if cfg.stem_pool:
            stem.append(nn.MaxPool2d(2, ceil_mode=True))
        self.stem = nn.Sequential(*stem)
        stages = []
        cin = cfg.widths[0]
        for si, width in enumerate(cfg.widths):
            blocks = []
            for bi in range(cfg.blocks_per_stage):
                stride = 2 if (si > 0 and bi == 0) else 1
                blocks.append(ResidualBlock(cin, width, stride, cfg.norm, cfg.activation))
                cin = width
            stages.append(nn.Sequential(*blocks))
        self.stages = nn.ModuleList(stages)
        self.embed = nn.Linear(cfg.widths[-1], cfg.embedding_dim)

    @property
    def embedding_dim(self) -> int:
        return self.cfg.embedding_dim

    def forward_features(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.cfg.in_bands:
            raise ModelConfigError(
                f"input has {x.shape[1]} bands, encoder expects {self.cfg.in_bands}"
            )
        if min(x.shape[-2:]) < 2:
            raise ModelConfigError(f"input spatial size {tuple(x.shape[-2:])} too small")
        out = self.stem(x)
        for stage in self.stages:
            out = stage(out)
        return out

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = self.forward_features(x)
        return self.embed(feats.mean(dim=(2, 3)))


class ProjectionHead(nn.Module):
    def __init__(self, in_dim: int, out_dim: int, hidden_dim: int | None, act: str):
        super().__init__()
        hidden = hidden_dim or in_dim
        self.net = nn.Sequential(nn.Linear(in_dim, hidden), _make_act(act), nn.Linear(hidden, out_dim))

    def forward(self, x):
        return self.net(x)


class LinearHead(nn.Module):
    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.fc = nn.Linear(in_dim, out_dim)

    def forward(self, x):
        return self.fc(x)


class InpaintDecoder(nn.Module):
    """Upsample the pre-pooling feature map back to a C x H x W image."""

    def __init__(self, encoder_cfg: EncoderConfig, out_channels: int):
        super().__init__()
        ups = max(1, int(round(np.log2(encoder_cfg.downsample_factor))))
        layers: list[nn.Module] = []
        ch = encoder_cfg.widths[-1]
        for _ in range(ups):
            nxt = max(8, ch // 2)
            layers += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(ch, nxt, 3, padding=1, bias=False),
                _make_norm(encoder_cfg.norm, nxt),
                _make_act(encoder_cfg.activation),
            ]
            ch = nxt
        self.up = nn.Sequential(*layers)
        self.out = nn.Conv2d(ch, out_channels, 3, padding=1)

    def forward(self, feats: torch.Tensor, target_hw: tuple[int, int]) -> torch.Tensor:
        x = self.up(feats)
        if tuple(x.shape[-2:]) != tuple(target_hw):
            x = nn.functional.interpolate(x, size=target_hw, mode="bilinear", align_corners=False)
        return self.out(x)


class CompositeModel(nn.Module):
    """Encoder plus one attached task head; forward dispatches on the head kind."""

    def __init__(self, encoder: Encoder, head: nn.Module, head_cfg: HeadConfig):
        super().__init__()
        self.encoder = encoder
        self.head = head
        self.head_cfg = head_cfg

    @property
    def kind(self) -> str:
        return self.head_cfg.kind

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.kind == "inpaint-decoder":
            feats = self.encoder.forward_features(x)
            return self.head(feats, x.shape[-2:])
        return self.head(self.encoder(x))


def build_encoder(cfg: EncoderConfig, seed: int) -> Encoder:
    """Construct an encoder with initialization deterministic in the seed."""
    torch.manual_seed(seed)
    return Encoder(cfg)


def _make_head(encoder: Encoder, head: HeadConfig) -> nn.Module:
    d = encoder.embedding_dim
    if head.kind == "projection":
        return ProjectionHead(d, head.out_dim, head.hidden_dim, encoder.cfg.activation)
    if head.kind in ("linear-classifier", "jigsaw-position"):
        return LinearHead(d, head.out_dim)
    return InpaintDecoder(encoder.cfg, head.out_dim)


def attach_head(encoder: Encoder, head: HeadConfig, seed: int) -> CompositeModel:
    torch.manual_seed(seed)
    return CompositeModel(encoder, _make_head(encoder, head), head)


def encode(model: nn.Module, batch, train_mode: bool = False) -> np.ndarray:
    """Embed a (B,C,H,W) batch; eval mode is deterministic."""
    encoder = model.encoder if isinstance(model, CompositeModel) else model
    x = torch.as_tensor(np.asarray(batch), dtype=torch.float32)
    if x.ndim != 4:
        raise ModelConfigError(f"expected (B,C,H,W) batch, got shape {tuple(x.shape)}")
    was_training = encoder.training
    encoder.train(train_mode)
    try:
        with torch.no_grad() if not train_mode else torch.enable_grad():
            out = encoder(x)
    finally:
        encoder.train(was_training)
    result = out.detach().cpu().numpy()
    if not np.all(np.isfinite(result)):
        raise FloatingPointError("encoder produced non-finite activations")
    return result


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


@dataclass
class ModelCheckpoint:
    """Architecture metadata plus a named map of tensors."""

    meta: dict
    state: dict = field(default_factory=dict)  # name -> torch.Tensor (cpu)

    @classmethod
    def from_model(cls, model: nn.Module, meta: dict) -> "ModelCheckpoint":
        state = {k: v.detach().cpu().clone() for k, v in model.state_dict().items()}
        meta = dict(meta)
        meta.setdefault("format_version", CHECKPOINT_VERSION)
        meta["dtypes"] = {k: str(v.dtype).replace("torch.", "") for k, v in state.items()}
        return cls(meta=meta, state=state)

    def build_model(self, strip_head: bool = False) -> nn.Module:
        encoder_cfg = EncoderConfig.from_json(self.meta["encoder"])
        encoder = Encoder(encoder_cfg)
        if strip_head or not self.meta.get("head"):
            wanted = {k[len("encoder.") :]: v for k, v in self.state.items() if k.startswith("encoder.")}
            if not wanted:  # encoder-only checkpoint
                wanted = dict(self.state)
            missing = set(encoder.state_dict()) - set(wanted)
            if missing:
                raise CheckpointError(f"checkpoint missing encoder parameters: {sorted(missing)[:4]}")
            _strict_load(encoder, wanted)
            return encoder
        head_cfg = HeadConfig.from_json(self.meta["head"])
        model = CompositeModel(encoder, _make_head(encoder, head_cfg), head_cfg)
        _strict_load(model, self.state)
        return model


def _strict_load(model: nn.Module, state: dict) -> None:
    own = model.state_dict()
    for name, tensor in state.items():
        if name not in own:
            raise CheckpointError(f"unexpected parameter {name!r}")
        if tuple(own[name].shape) != tuple(tensor.shape):
            raise CheckpointError(
                f"shape mismatch for {name!r}: checkpoint {tuple(tensor.shape)}, model {tuple(own[name].shape)}"
            )
    missing = set(own) - set(state)
    if missing:
        raise CheckpointError(f"missing parameters: {sorted(missing)[:4]}")
    model.load_state_dict(state, strict=True)


def _write_param(path: Path, tensor: torch.Tensor) -> None:
    arr = tensor.detach().cpu().to(torch.float32).numpy()
    with open(path, "wb") as f:
        f.write(PARAM_MAGIC)
        f.write(struct.pack("<I", arr.ndim))
        for d in arr.shape:
            f.write(struct.pack("<I", d))
        f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_param(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if data[:4] != PARAM_MAGIC:
        raise CheckpointError(f"{path}: bad parameter magic")
    (rank,) = struct.unpack("<I", data[4:8])
    dims = struct.unpack(f"<{rank}I", data[8 : 8 + 4 * rank])
    payload = data[8 + 4 * rank :]
    count = int(np.prod(dims)) if rank else 1
    if len(payload) != 4 * count:
        raise CheckpointError(f"{path}: truncated parameter blob")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


def save_checkpoint(model_or_ckpt, meta: dict | None, path) -> Path:
    """Write a checkpoint directory; see the module docstring for the layout."""
    if isinstance(model_or_ckpt, ModelCheckpoint):
        ckpt = model_or_ckpt
        if meta:
            ckpt = ModelCheckpoint(meta={**ckpt.meta, **meta}, state=ckpt.state)
    else:
        ckpt = ModelCheckpoint.from_model(model_or_ckpt, meta or {})
    path = Path(path)
    params_dir = path / "params"
    params_dir.mkdir(parents=True, exist_ok=True)
    checksums = {}
    meta_path = path / "meta.json"
    meta_path.write_text(json.dumps(ckpt.meta, indent=1, sort_keys=True))
    checksums["meta.json"] = zlib.crc32(meta_path.read_bytes())
    for name, tensor in ckpt.state.items():
        rel = f"params/{name}.bin"
        _write_param(path / rel, tensor)
        checksums[rel] = zlib.crc32((path / rel).read_bytes())
    (path / "checksums.json").write_text(json.dumps(checksums, indent=1, sort_keys=True))
    return path


def read_checkpoint(path) -> ModelCheckpoint:
    """Verify checksums and load a checkpoint's meta and tensors (no model)."""
    path = Path(path)
    meta_path = path / "meta.json"
    sums_path = path / "checksums.json"
    if not meta_path.is_file() or not sums_path.is_file():
        raise CheckpointError(f"{path}: not a checkpoint directory")
    checksums = json.loads(sums_path.read_text())
    for rel, expected in checksums.items():
        blob = (path / rel).read_bytes() if (path / rel).is_file() else None
        if blob is None:
            raise CheckpointError(f"{path}: missing file {rel}")
        if zlib.crc32(blob) != expected:
            raise ChecksumMismatchError(f"{path}: checksum mismatch for {rel}")
    meta = json.loads(meta_path.read_text())
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {meta.get('format_version')!r}"
        )
    dtypes = meta.get("dtypes", {})
    state = {}
    for rel in checksums:
        if not rel.startswith("params/"):
            continue
        name = rel[len("params/") : -len(".bin")]
        arr = _read_param(path / rel)
        dtype = getattr(torch, dtypes.get(name, "float32"))
        state[name] = torch.as_tensor(arr).to(dtype)
    return ModelCheckpoint(meta=meta, state=state)


def load_checkpoint(path, strip_head: bool = False):
    """Load a checkpoint directory; returns (model, meta).

    With strip_head=True only the encoder is rebuilt and returned.
    """
    ckpt = read_checkpoint(path)
    model = ckpt.build_model(strip_head=strip_head)
    return model, ckpt.meta


def checkpoint_of(model: nn.Module, **meta) -> ModelCheckpoint:
    """Snapshot a composite model with its architecture recorded in the meta."""
    base = {}
    if isinstance(model, CompositeModel):
        base["encoder"] = model.encoder.cfg.to_json()
        base["head"] = model.head_cfg.to_json()
    elif isinstance(model, Encoder):
        base["encoder"] = model.cfg.to_json()
        base["head"] = None
    base.update(meta)
    return ModelCheckpoint.from_model(model, base)
