"""Graph-adapter fine-tuning for frozen convolutional EEG encoders."""

from .adapter import AdapterConfig, GraphAdapter, gat_layer, gcn_layer, length_adapt, sage_layer
from .autodiff import (
    NonDifferentiablePointWarning,
    NumericFaultError,
    ShapeMismatchError,
    Tape,
    TapeError,
    Tensor,
    fresh_tape,
    grad_check,
    no_grad,
    set_debug,
)
from .encoder import ConvEncoder, EncoderConfig, MaskedPretrainer, PretrainConfig, mask_spans, pretrain
from .estimators import (
    BandpassFilter,
    ChannelSelector,
    GraphAdapterClassifier,
    NotchFilter,
    Resampler,
    Segmenter,
)
from .fileio import Checkpoint, load_checkpoint, read_recording, save_checkpoint, write_recording
from .harness import ExperimentConfig, FoldReport, finetune, kfold_split, report, run_pretrain
from .heads import ClassifierHead, aggregate, classify, cross_entropy
from .metrics import auroc, f1_score
from .model import DownstreamModel, build_model
from .montage import CANONICAL_1020, MontageGraph, build_graph, default_graph, geodesic_distance
from .optim import Adam, MissingGradError, ModelBundle
from .signal import Recording, Segment, bandpass_filter, notch_filter, resample, segment, select_channels
from .synth import SynthSpec, synthesize_dataset

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "AdapterConfig",
    "BandpassFilter",
    "CANONICAL_1020",
    "ChannelSelector",
    "Checkpoint",
    "ClassifierHead",
    "ConvEncoder",
    "DownstreamModel",
    "EncoderConfig",
    "ExperimentConfig",
    "FoldReport",
    "GraphAdapter",
    "GraphAdapterClassifier",
    "MaskedPretrainer",
    "MissingGradError",
    "ModelBundle",
    "MontageGraph",
    "NonDifferentiablePointWarning",
    "NotchFilter",
    "NumericFaultError",
    "PretrainConfig",
    "Recording",
    "Resampler",
    "Segment",
    "Segmenter",
    "ShapeMismatchError",
    "SynthSpec",
    "Tape",
    "TapeError",
    "Tensor",
    "aggregate",
    "auroc",
    "bandpass_filter",
    "build_graph",
    "build_model",
    "classify",
    "cross_entropy",
    "default_graph",
    "f1_score",
    "finetune",
    "fresh_tape",
    "gat_layer",
    "gcn_layer",
    "geodesic_distance",
    "grad_check",
    "kfold_split",
    "length_adapt",
    "load_checkpoint",
    "mask_spans",
    "no_grad",
    "notch_filter",
    "pretrain",
    "read_recording",
    "report",
    "resample",
    "run_pretrain",
    "sage_layer",
    "save_checkpoint",
    "segment",
    "select_channels",
    "set_debug",
    "synthesize_dataset",
    "write_recording",
    "__version__",
]
