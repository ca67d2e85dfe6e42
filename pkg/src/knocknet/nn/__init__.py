"""NumPy implementation of the theory-guided knock CNN."""
from .estimator import KnockNetClassifier, classify
from .layers import CONV_MODES, CROSS_CHANNEL, SHARED_KERNEL
from .network import (
    VARIANTS,
    KnockNet,
    backward,
    build_model,
    build_variant,
    count_parameters,
    forward,
    kernel_for_variant,
    layer_lengths,
    loss,
)
from .serialization import load_model, save_model
from .training import TrainConfig, TrainReport, train

__all__ = [
    "CONV_MODES", "CROSS_CHANNEL", "SHARED_KERNEL", "VARIANTS", "KnockNet", "KnockNetClassifier",
    "TrainConfig", "TrainReport", "backward", "build_model", "build_variant", "classify",
    "count_parameters", "forward", "kernel_for_variant", "layer_lengths", "load_model", "loss",
    "save_model", "train",
]
