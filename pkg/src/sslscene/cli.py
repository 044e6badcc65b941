"""Command-line frontend: generate data, pretrain, fine-tune, evaluate, sweep.

Exit codes: 0 success, 1 usage error, 2 runtime failure.  Every flag can
also be supplied through `--config <file.json>` (keys are the flag names
with dashes replaced by underscores); an explicit flag wins over the file.
Progress goes to stderr as JSON lines, machine-readable output paths and
metrics go to stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from sslscene import __version__, datasets, evaluation, models, pretrain as pretrain_mod, transfer
from sslscene.augment import AugmentError, AugmentPolicy, MaskSpec
from sslscene.datasets import DatasetError, SplitSpec, SynthSpec
from sslscene.evaluation import ExperimentConfig, ExperimentError
from sslscene.models import CheckpointError, EncoderConfig, ModelConfigError, desk_encoder_config
from sslscene.pretrain import DivergenceError, PretrainConfig
from sslscene.transfer import SplitShapeError, TransferConfig

RUNTIME_ERRORS = (
    DatasetError,
    AugmentError,
    CheckpointError,
    ModelConfigError,
    DivergenceError,
    SplitShapeError,
    ExperimentError,
    OSError,
    ValueError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage problems, not argparse's 2
        raise UsageError(message)


def _pair(text: str) -> tuple[float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}")
    return (parts[0], parts[1])


def _grid(text: str) -> tuple[int, int]:
    parts = [int(p) for p in text.replace("x", ",").split(",")]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected 'MxN', got {text!r}")
    return (parts[0], parts[1])


def _widths(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(","))


def build_parser() -> _Parser:
    parser = _Parser(prog="sslscene", description=__doc__)
    parser.add_argument("--version", action="version", version=f"sslscene {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add(name, help_, **kwargs):
        p = sub.add_parser(name, help=help_, description=help_, **kwargs)
        p.add_argument("--config", type=Path, default=None, help="JSON file with flag defaults")
        return p

    p = add("data-synth", "generate a synthetic multi-band scene dataset with splits")
    p.add_argument("--classes", type=int, default=None, help="number of scene classes (default 4)")
    p.add_argument("--bands", type=int, default=None, help="spectral bands per sample (default 3)")
    p.add_argument("--size", type=int, default=None, help="image side length in pixels (default 64)")
    p.add_argument("--per-class", type=int, default=None, help="samples per class (default 200)")
    p.add_argument("--seed", type=int, default=None, help="generator seed (default 0)")
    p.add_argument("--variant", type=int, default=None, help="texture-family rotation; changes the domain")
    p.add_argument("--test-fraction", type=float, default=None, help="held-out test fraction (default 0.25)")
    p.add_argument(
        "--pretrain-includes-test",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="tag test samples for pretraining too (off by default to avoid leakage)",
    )
    p.add_argument("--out", type=Path, required=True, help="output dataset directory")

    p = add("pretrain", "train an encoder on a pretext task")
    p.add_argument("--task", choices=pretrain_mod.PRETEXT_TASKS, default=None, help="pretext task")
    p.add_argument("--data", type=Path, required=True, help="dataset directory or manifest.json")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None, help="batch size (default 64)")
    p.add_argument("--lr", type=float, default=None, help="base learning rate (default 1e-3)")
    p.add_argument("--tau", type=float, default=None, help="contrastive temperature (default 0.5)")
    p.add_argument("--grid", type=_grid, default=None, help="jigsaw grid, e.g. 3x3")
    p.add_argument("--gap", type=int, default=None, help="pixels trimmed per jigsaw patch edge")
    p.add_argument("--mask-coverage", type=_pair, default=None, help="inpainting mask coverage 'lo,hi'")
    p.add_argument("--mask-fill", choices=("mean", "zero"), default=None)
    p.add_argument("--region", choices=("masked", "full"), default=None, help="inpainting loss region")
    p.add_argument("--fraction", type=float, default=None, help="subsample the pretrain split first")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None, help="epochs between checkpoints")
    p.add_argument("--widths", type=_widths, default=None, help="encoder stage widths, e.g. 16,32,64")
    p.add_argument("--blocks", type=int, default=None, help="residual blocks per stage")
    p.add_argument("--embedding-dim", type=int, default=None)
    p.add_argument("--norm", choices=("batch", "group"), default=None)
    p.add_argument("--out", type=Path, required=True, help="checkpoint output directory")

    p = add("finetune", "few-shot fine-tune a pretrained checkpoint (or train from scratch)")
    p.add_argument("--ckpt", type=Path, default=None, help="pretrained checkpoint (omit for scratch)")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--shots", type=int, default=None, help="labeled samples per class (default 5)")
    p.add_argument("--mode", choices=transfer.TRANSFER_MODES, default=None, help="default linear")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--widths", type=_widths, default=None, help="scratch-mode encoder widths")
    p.add_argument("--blocks", type=int, default=None)
    p.add_argument("--embedding-dim", type=int, default=None)
    p.add_argument("--norm", choices=("batch", "group"), default=None)
    p.add_argument("--out", type=Path, required=True, help="classifier checkpoint directory")

    p = add("eval", "evaluate a classifier checkpoint; prints oa=<value>")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", choices=datasets.SPLIT_NAMES, default=None, help="default test")

    p = add("experiment", "run a factor-study sweep from an experiment config")
    p.add_argument("--out", type=Path, required=True, help="sweep output directory")

    p = add("inspect", "print a checkpoint's metadata")
    p.add_argument("--ckpt", type=Path, required=True)

    return parser


def _merge_config(parser_args: argparse.Namespace, argv_flags: set[str]) -> dict:
    """Resolve flag > config-file > nothing; returns the config-file dict."""
    ns = vars(parser_args)
    if not ns.get("config"):
        return {}
    path = Path(ns["config"])
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise UsageError(f"malformed config JSON {path}: {e}")
    if not isinstance(doc, dict):
        raise UsageError(f"config {path} must be a JSON object")
    for key, value in doc.items():
        dest = key.replace("-", "_")
        if dest not in ns:
            if ns.get("command") == "experiment":
                continue  # experiment configs carry sweep keys, not flags
            raise UsageError(f"unknown config key {key!r} for command {ns.get('command')}")
        if ns[dest] is None and dest not in argv_flags:
            ns[dest] = value
    return doc


def _value(ns, name, default):
    v = getattr(ns, name, None)
    return default if v is None else v


def _encoder_config(ns, in_bands: int) -> EncoderConfig:
    base = desk_encoder_config(in_bands)
    widths = _value(ns, "widths", base.widths)
    return EncoderConfig(
        in_bands=in_bands,
        widths=tuple(widths),
        blocks_per_stage=_value(ns, "blocks", base.blocks_per_stage),
        embedding_dim=_value(ns, "embedding_dim", base.embedding_dim),
        norm=_value(ns, "norm", base.norm),
    )


def cmd_data_synth(ns) -> int:
    spec = SynthSpec(
        classes=_value(ns, "classes", 4),
        bands=_value(ns, "bands", 3),
        size=_value(ns, "size", 64),
        per_class=_value(ns, "per_class", 200),
        seed=_value(ns, "seed", 0),
        out=ns.out,
        variant=_value(ns, "variant", 0),
    )
    manifest = datasets.synth_generate(spec)
    manifest = datasets.split(
        manifest,
        SplitSpec(test_fraction=_value(ns, "test_fraction", 0.25), seed=spec.seed, stratified=True),
        pretrain_includes_test=bool(_value(ns, "pretrain_includes_test", False)),
    )
    path = datasets.save_manifest(manifest, ns.out)
    print(path)
    return 0


def cmd_pretrain(ns) -> int:
    manifest = datasets.load_manifest(ns.data)
    seed = _value(ns, "seed", 0)
    fraction = _value(ns, "fraction", 1.0)
    if fraction != 1.0:
        manifest = datasets.subsample_fraction(manifest, fraction, seed)
    task = _value(ns, "task", "instance")
    cfg = PretrainConfig(
        task=task,
        epochs=_value(ns, "epochs", 100),
        batch_size=_value(ns, "batch", 64),
        base_lr=_value(ns, "lr", 1e-3),
        tau=_value(ns, "tau", 0.5),
        grid=_value(ns, "grid", (3, 3)),
        gap=_value(ns, "gap", 0),
        mask=MaskSpec(
            coverage_range=_value(ns, "mask_coverage", (0.15, 0.35)),
            fill=_value(ns, "mask_fill", "mean"),
        ),
        inpaint_region=_value(ns, "region", "masked"),
        policy=AugmentPolicy(),
        seed=seed,
        checkpoint_every=_value(ns, "checkpoint_every", 0),
    )
    encoder_cfg = _encoder_config(ns, datasets.band_count(manifest))
    pretrain_mod.pretrain(manifest, encoder_cfg, cfg, out_dir=ns.out, log_stream=sys.stderr)
    print(Path(ns.out) / "final")
    return 0


def cmd_finetune(ns) -> int:
    manifest = datasets.load_manifest(ns.data)
    seed = _value(ns, "seed", 0)
    shots = _value(ns, "shots", 5)
    mode = _value(ns, "mode", "linear")
    few = datasets.few_shot_sample(manifest, shots, seed)
    cfg = TransferConfig(
        mode=mode,
        shots=shots,
        epochs=_value(ns, "epochs", 100),
        batch_size=_value(ns, "batch", min(64, shots * max(manifest.num_classes, 1))),
        base_lr=_value(ns, "lr", None),
        seed=seed,
    )
    checkpoint = models.read_checkpoint(ns.ckpt) if ns.ckpt else None
    encoder_cfg = None
    if mode == "scratch" and checkpoint is None:
        encoder_cfg = _encoder_config(ns, datasets.band_count(manifest))
    result = transfer.finetune(checkpoint, few, cfg, encoder_cfg=encoder_cfg, log_stream=sys.stderr)
    models.save_checkpoint(result, None, ns.out)
    print(ns.out)
    return 0


def cmd_eval(ns) -> int:
    checkpoint = models.read_checkpoint(ns.ckpt)
    manifest = datasets.load_manifest(ns.data)
    preds, labels = transfer.predict_manifest(checkpoint, manifest, split=_value(ns, "split", "test"))
    oa = evaluation.overall_accuracy(preds, labels)
    print(f"oa={oa:.6f}")
    return 0


def cmd_experiment(ns, config_doc: dict) -> int:
    if not config_doc:
        raise UsageError("experiment requires --config <experiment.json>")
    cfg = ExperimentConfig.from_json(config_doc)
    evaluation.run_experiment(cfg, ns.out, log_stream=sys.stderr)
    print(Path(ns.out) / "results.csv")
    print(Path(ns.out) / "summary.md")
    return 0


def cmd_inspect(ns) -> int:
    checkpoint = models.read_checkpoint(ns.ckpt)
    print(json.dumps(checkpoint.meta, indent=1, sort_keys=True))
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if not getattr(ns, "command", None):
            parser.print_help(sys.stderr)
            return 1
        argv_flags = {a.lstrip("-").replace("-", "_").split("=")[0] for a in argv if a.startswith("--")}
        config_doc = _merge_config(ns, argv_flags)
        handlers = {
            "data-synth": cmd_data_synth,
            "pretrain": cmd_pretrain,
            "finetune": cmd_finetune,
            "eval": cmd_eval,
            "inspect": cmd_inspect,
        }
        if ns.command == "experiment":
            return cmd_experiment(ns, config_doc)
        return handlers[ns.command](ns)
    except SystemExit as e:  # argparse --help / --version
        return int(e.code or 0)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except RUNTIME_ERRORS as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
