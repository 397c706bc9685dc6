"""Unsupervised cross-spectral stereo: joint spectral translation and
disparity estimation on a self-contained numpy autodiff engine."""

from .config import ConfigError, TrainConfig, load_config, parse_config, save_config, serialize_config
from .data import SpectralPair, SyntheticSceneSpec, generate_synthetic, load_dataset, render_scene
from .losses import LossWeights
from .networks import NetworkSpec, Networks, build_networks, translate_image
from .optim import StepLog, TrainingAborted, run_iteration, train
from .tensor import Tensor, backward, float64_scope, no_grad

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "TrainConfig", "load_config", "parse_config", "save_config",
    "serialize_config", "SpectralPair", "SyntheticSceneSpec", "generate_synthetic",
    "load_dataset", "render_scene", "LossWeights", "NetworkSpec", "Networks",
    "build_networks", "translate_image", "StepLog", "TrainingAborted", "run_iteration",
    "train", "Tensor", "backward", "float64_scope", "no_grad", "__version__",
]
