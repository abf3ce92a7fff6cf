"""Frame-wise image/video transformer: python bindings for the C++ core."""

from ._core import (
    ConfigError,
    ContractError,
    IoError,
    Model,
    NumericError,
    ShapeError,
    cross_entropy,
    dtp_weight,
    dwa_weights,
    evaluate,
    export_metrics,
    gelu,
    gradcheck,
    layer_norm,
    matmul,
    mean_axis,
    softmax,
    synth_dataset,
    token_shift,
    train,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "IoError",
    "Model",
    "NumericError",
    "ShapeError",
    "cross_entropy",
    "dtp_weight",
    "dwa_weights",
    "evaluate",
    "export_metrics",
    "gelu",
    "gradcheck",
    "layer_norm",
    "matmul",
    "mean_axis",
    "softmax",
    "synth_dataset",
    "token_shift",
    "train",
]

__version__ = "0.1.0"
