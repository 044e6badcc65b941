"""Metrics and the factor-study experiment runner.

`run_experiment` executes the full cross product of (pretext, source,
fraction, seed) pretraining cells, then fine-tunes and evaluates each
pretrained encoder on every (target, shots) combination.  Results land in a
flat `results.csv`; `summary.md` regroups them into the factor tables
(pretext choice, source-target domain pairs, pretraining data amount).
Completed cells are skipped on re-runs, so a sweep is resumable, and a
failing cell is recorded in `errors.json` without aborting its siblings.
"""

from __future__ import annotations

import csv
import hashlib
import json
import sys
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from sslscene import datasets, transfer
from sslscene.datasets import DatasetManifest
from sslscene.models import EncoderConfig, desk_encoder_config, read_checkpoint, save_checkpoint
from sslscene.pretrain import PRETEXT_TASKS, PretrainConfig, pretrain
from sslscene.transfer import TransferConfig, finetune, predict_manifest

CSV_FIELDS = ("pretext", "source", "target", "fraction", "shots", "seed", "oa", "wall_seconds", "checkpoint")


class ExperimentError(Exception):
    pass


def overall_accuracy(predictions, labels) -> float:
    """Fraction of correct predictions."""
    predictions = list(predictions)
    labels = list(labels)
    if len(predictions) != len(labels):
        raise ValueError(f"length mismatch: {len(predictions)} predictions vs {len(labels)} labels")
    if not predictions:
        raise ValueError("empty input")
    correct = sum(1 for p, t in zip(predictions, labels) if p == t)
    return correct / len(predictions)


@dataclass(frozen=True)
class ResultRecord:
    pretext: str
    source: str
    target: str
    fraction: float
    shots: int
    seed: int
    oa: float
    wall_seconds: float
    checkpoint: str

    @property
    def axis_key(self) -> tuple:
        return (self.pretext, self.source, self.target, float(self.fraction), self.shots, self.seed)

    def to_row(self) -> dict:
        return {
            "pretext": self.pretext,
            "source": self.source,
            "target": self.target,
            "fraction": f"{self.fraction:g}",
            "shots": self.shots,
            "seed": self.seed,
            "oa": f"{self.oa:.6f}",
            "wall_seconds": f"{self.wall_seconds:.3f}",
            "checkpoint": self.checkpoint,
        }

    @classmethod
    def from_row(cls, row: dict) -> "ResultRecord":
        return cls(
            pretext=row["pretext"],
            source=row["source"],
            target=row["target"],
            fraction=float(row["fraction"]),
            shots=int(row["shots"]),
            seed=int(row["seed"]),
            oa=float(row["oa"]),
            wall_seconds=float(row["wall_seconds"]),
            checkpoint=row["checkpoint"],
        )


def summarize(records, group_axes) -> list[dict]:
    """Mean and (n-1)-denominator std of OA per group of axis values.

    Single-record groups get std 0.0 and a `single_seed` flag.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to summarize")
    groups: dict[tuple, list[float]] = {}
    for r in records:
        key = tuple(getattr(r, a) for a in group_axes)
        groups.setdefault(key, []).append(r.oa)
    out = []
    for key in sorted(groups, key=str):
        vals = groups[key]
        mean = float(np.mean(vals))
        std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        entry = dict(zip(group_axes, key))
        entry.update(mean=mean, std=std, n=len(vals), single_seed=len(vals) == 1)
        out.append(entry)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative factor-study sweep.

    A source given as a list of manifest paths is mixed into one unlabeled
    pretraining pool (band counts must agree).
    """

    pretexts: tuple[str, ...]
    sources: tuple = ()
    targets: tuple[str, ...] = ()
    fractions: tuple[float, ...] = (1.0,)
    shots: tuple[int, ...] = (5,)
    seeds: tuple[int, ...] = (0,)
    pretrain: dict = field(default_factory=dict)
    transfer: dict = field(default_factory=dict)
    encoder: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.pretexts or not self.sources or not self.targets:
            raise ExperimentError("pretexts, sources and targets must be non-empty")
        if not self.fractions or not self.shots or not self.seeds:
            raise ExperimentError("fractions, shots and seeds must be non-empty")
        for p in self.pretexts:
            if p not in PRETEXT_TASKS:
                raise ExperimentError(f"unknown pretext {p!r}")
        for f in self.fractions:
            if not (0.0 < f <= 1.0):
                raise ExperimentError(f"fraction {f} out of (0, 1]")

    def to_json(self) -> dict:
        return {
            "pretexts": list(self.pretexts),
            "sources": [list(s) if isinstance(s, (list, tuple)) else s for s in self.sources],
            "targets": list(self.targets),
            "fractions": list(self.fractions),
            "shots": list(self.shots),
            "seeds": list(self.seeds),
            "pretrain": self.pretrain,
            "transfer": self.transfer,
            "encoder": self.encoder,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentConfig":
        return cls(
            pretexts=tuple(doc["pretexts"]),
            sources=tuple(tuple(s) if isinstance(s, list) else s for s in doc["sources"]),
            targets=tuple(doc["targets"]),
            fractions=tuple(doc.get("fractions", [1.0])),
            shots=tuple(doc.get("shots", [5])),
            seeds=tuple(doc.get("seeds", [0])),
            pretrain=doc.get("pretrain", {}),
            transfer=doc.get("transfer", {}),
            encoder=doc.get("encoder", {}),
        )

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()[:12]


def _load_source(entry) -> DatasetManifest:
    if isinstance(entry, (list, tuple)):
        return datasets.mix([datasets.load_manifest(p) for p in entry])
    return datasets.load_manifest(entry)


def _read_records(path: Path) -> list[ResultRecord]:
    if not path.is_file():
        return []
    with open(path, newline="") as f:
        return [ResultRecord.from_row(row) for row in csv.DictReader(f)]


def _append_record(path: Path, record: ResultRecord) -> None:
    new_file = not path.is_file()
    with open(path, "a", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS)
        if new_file:
            writer.writeheader()
        writer.writerow(record.to_row())


def _slug(*parts) -> str:
    return "_".join(str(p).replace("/", "-").replace("+", "-") for p in parts)


def _encoder_cfg(cfg: ExperimentConfig, in_bands: int) -> EncoderConfig:
    if cfg.encoder:
        doc = dict(cfg.encoder)
        doc.setdefault("in_bands", in_bands)
        return EncoderConfig.from_json(doc)
    return desk_encoder_config(in_bands)


def run_experiment(cfg: ExperimentConfig, out_dir, log_stream=sys.stderr) -> list[ResultRecord]:
    """Execute the sweep; returns all records (existing plus new)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results_path = out / "results.csv"
    errors_path = out / "errors.json"
    (out / "meta.json").write_text(
        json.dumps({"config": cfg.to_json(), "config_hash": cfg.config_hash()}, indent=1)
    )

    records = _read_records(results_path)
    done = {r.axis_key for r in records}
    errors: dict[str, str] = json.loads(errors_path.read_text()) if errors_path.is_file() else {}

    sources = {}
    for entry in cfg.sources:
        m = _load_source(entry)
        if not m.split_ids("pretrain"):
            raise ExperimentError(f"source {m.name!r} has an empty pretrain split")
        sources[m.name] = m
    targets = {}
    for path in cfg.targets:
        m = datasets.load_manifest(path)
        if not m.split_ids("test"):
            raise ExperimentError(f"target {m.name!r} has an empty test split")
        targets[m.name] = m

    def say(msg):
        if log_stream is not None:
            log_stream.write(msg + "\n")
            log_stream.flush()

    for pretext in cfg.pretexts:
        for src_name, source in sources.items():
            src_bands = datasets.band_count(source)
            for fraction in cfg.fractions:
                for seed in cfg.seeds:
                    cell = _slug(pretext, src_name, f"{fraction:g}", seed)
                    todo = [
                        (t, s)
                        for t in targets
                        for s in cfg.shots
                        if (pretext, src_name, t, float(fraction), s, seed) not in done
                    ]
                    if not todo:
                        continue
                    ckpt_dir = out / "checkpoints" / cell
                    try:
                        t_pre = time.monotonic()
                        if (ckpt_dir / "final" / "meta.json").is_file():
                            checkpoint = read_checkpoint(ckpt_dir / "final")
                            say(f"[experiment] reusing checkpoint {cell}")
                        else:
                            pool = datasets.subsample_fraction(source, fraction, seed)
                            pcfg = PretrainConfig.from_json(
                                {**cfg.pretrain, "task": pretext, "seed": seed}
                            )
                            say(f"[experiment] pretraining {cell} ({len(pool.split_ids('pretrain'))} samples)")
                            checkpoint = pretrain(
                                pool, _encoder_cfg(cfg, src_bands), pcfg, log_stream=None
                            )
                            save_checkpoint(checkpoint, None, ckpt_dir / "final")
                        pretrain_seconds = time.monotonic() - t_pre
                    except Exception as e:  # noqa: BLE001 - isolate cell failures
                        errors[cell] = f"{type(e).__name__}: {e}"
                        errors_path.write_text(json.dumps(errors, indent=1))
                        say(f"[experiment] FAILED pretraining {cell}: {e}")
                        say(traceback.format_exc(limit=4))
                        continue
                    for target_name, shots in todo:
                        target = targets[target_name]
                        key_str = _slug(cell, target_name, shots)
                        try:
                            if datasets.band_count(target) != src_bands:
                                raise ExperimentError(
                                    f"band mismatch: source {src_name} has {src_bands}, "
                                    f"target {target_name} has {datasets.band_count(target)}"
                                )
                            t0 = time.monotonic()
                            few = datasets.few_shot_sample(target, shots, seed)
                            tcfg = TransferConfig.from_json(
                                {**cfg.transfer, "shots": shots, "seed": seed}
                            )
                            clf = finetune(checkpoint, few, tcfg, log_stream=None)
                            preds, labels = predict_manifest(clf, few, split="test")
                            oa = overall_accuracy(preds, labels)
                            record = ResultRecord(
                                pretext=pretext,
                                source=src_name,
                                target=target_name,
                                fraction=float(fraction),
                                shots=shots,
                                seed=seed,
                                oa=oa,
                                wall_seconds=pretrain_seconds + (time.monotonic() - t0),
                                checkpoint=str(ckpt_dir / "final"),
                            )
                            _append_record(results_path, record)
                            records.append(record)
                            done.add(record.axis_key)
                            say(f"[experiment] {key_str}: oa={oa:.4f}")
                        except Exception as e:  # noqa: BLE001
                            errors[key_str] = f"{type(e).__name__}: {e}"
                            errors_path.write_text(json.dumps(errors, indent=1))
                            say(f"[experiment] FAILED {key_str}: {e}")
                            say(traceback.format_exc(limit=4))
    write_summary(records, out / "summary.md")
    return records


def _fmt(entry) -> str:
    pct = 100.0 * entry["mean"]
    spread = 100.0 * entry["std"]
    flag = " (single seed)" if entry["single_seed"] else ""
    return f"{pct:.2f} ± {spread:.2f}{flag}"


def _table(records, row_axis, col_axis, extra_axes=()) -> list[str]:
    cols = sorted({getattr(r, col_axis) for r in records}, key=str)
    summaries = summarize(records, (row_axis, *extra_axes, col_axis))
    by_key = {tuple(s[a] for a in (row_axis, *extra_axes, col_axis)): s for s in summaries}
    rows = sorted({tuple(getattr(r, a) for a in (row_axis, *extra_axes)) for r in records}, key=str)
    head = [row_axis] + [str(a) for a in extra_axes] + [str(c) for c in cols]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for row in rows:
        cells = [str(v) for v in row]
        for c in cols:
            s = by_key.get((*row, c))
            cells.append(_fmt(s) if s else "—")
        lines.append("| " + " | ".join(cells) + " |")
    return lines


def write_summary(records, path) -> Path:
    """Markdown summary: one section per factor axis, OA as mean ± std (%)."""
    path = Path(path)
    if not records:
        path.write_text("# Experiment summary\n\nNo records.\n")
        return path
    lines = ["# Experiment summary", ""]
    lines += ["## Pretext task vs target", ""]
    lines += _table(records, "pretext", "target")
    lines += ["", "## Source domain vs target (instance runs)", ""]
    id_records = [r for r in records if r.pretext == "instance"] or records
    lines += _table(id_records, "source", "target")
    lines += ["", "## Pretraining data amount", ""]
    lines += _table(records, "source", "target", extra_axes=("fraction",))
    lines += ["", "## Shots", ""]
    lines += _table(records, "pretext", "target", extra_axes=("shots",))
    lines += ["", f"_{len(records)} records._", ""]
    path.write_text("\n".join(lines))
    return path
