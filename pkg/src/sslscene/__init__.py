"""Self-supervised pretraining and few-shot transfer for multi-band scene imagery."""

__version__ = "0.1.0"

from sslscene.datasets import (
    BandInfo,
    DatasetManifest,
    ManifestEntry,
    RasterSample,
    SplitSpec,
    SynthSpec,
    few_shot_sample,
    load_manifest,
    mix,
    read_sample,
    save_manifest,
    split,
    subsample_fraction,
    synth_generate,
)

__all__ = [
    "__version__",
    "BandInfo",
    "DatasetManifest",
    "ManifestEntry",
    "RasterSample",
    "SplitSpec",
    "SynthSpec",
    "few_shot_sample",
    "load_manifest",
    "mix",
    "read_sample",
    "save_manifest",
    "split",
    "subsample_fraction",
    "synth_generate",
]
