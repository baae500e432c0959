"""fctnet: a self-contained NumPy implementation of the Fully Convolutional
Transformer for 2-D image segmentation, with reverse-mode autodiff, a training
harness, a FLOP/parameter profiler, and a command line interface."""

from .attention import AttentionConfig, AttentionParams, convolutional_attention, init_attention, mhsa
from .augment import AugmentConfig, augment
from .data import Dataset, DatasetManifest, SegmentationSample, load_dataset
from .errors import NumericsError, ShapeError, UsageError, ValidationError
from .fct_layer import FctLayerConfig, FctLayerParams, FctLayerTrace, fct_layer_forward, init_fct_layer
from .gradcheck import grad_check, oracle_suite
from .losses import combined_loss, cross_entropy, dice_coefficient, one_hot, soft_dice
from .model import (
    Model,
    ModelConfig,
    build_model,
    load_checkpoint,
    model_forward,
    profile,
    save_checkpoint,
)
from .optim import AdamState, adam_step, lr_schedule
from .synth import synth_dataset, synth_samples
from .tensor import Tape, Tensor
from .tensorfile import read_fctt, write_fctt
from .train import TrainConfig, TrainReport, evaluate, train
from .wide_focus import WideFocusConfig, WideFocusParams, init_wide_focus, wide_focus

__version__ = "0.1.0"

__all__ = [
    "AttentionConfig",
    "AttentionParams",
    "AdamState",
    "AugmentConfig",
    "Dataset",
    "DatasetManifest",
    "FctLayerConfig",
    "FctLayerParams",
    "FctLayerTrace",
    "Model",
    "ModelConfig",
    "NumericsError",
    "SegmentationSample",
    "ShapeError",
    "Tape",
    "Tensor",
    "TrainConfig",
    "TrainReport",
    "UsageError",
    "ValidationError",
    "WideFocusConfig",
    "WideFocusParams",
    "adam_step",
    "augment",
    "build_model",
    "combined_loss",
    "convolutional_attention",
    "cross_entropy",
    "dice_coefficient",
    "evaluate",
    "fct_layer_forward",
    "grad_check",
    "init_attention",
    "init_fct_layer",
    "init_wide_focus",
    "load_checkpoint",
    "load_dataset",
    "lr_schedule",
    "mhsa",
    "model_forward",
    "one_hot",
    "oracle_suite",
    "profile",
    "read_fctt",
    "save_checkpoint",
    "soft_dice",
    "synth_dataset",
    "synth_samples",
    "train",
    "wide_focus",
    "write_fctt",
]
