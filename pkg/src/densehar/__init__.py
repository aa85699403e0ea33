"""Dense per-sample activity labeling with a fully convolutional network."""

__version__ = "0.1.0"

from .data import LabeledSequence, SynthSpec, synth_generate
from .infer import dense_predict, plan_tiles
from .model import ArchConfig, FcnModel, build_fcn, forward, load_model, save_model
from .train import TrainConfig

__all__ = [
    "ArchConfig",
    "FcnModel",
    "LabeledSequence",
    "SynthSpec",
    "TrainConfig",
    "build_fcn",
    "dense_predict",
    "forward",
    "load_model",
    "plan_tiles",
    "save_model",
    "synth_generate",
]
