"""Sandstorm image restoration with an integrated-variable network.

The degraded image ``I`` is mapped to a per-pixel field ``phi`` by a small
encoder-decoder; the clear image follows as ``J = phi * (I - alpha) + beta``.
Everything runs on NumPy, including a reverse-mode autodiff core.
"""

from .errors import (AOSRError, ConfigError, ContractError, DimensionError, DomainError, DTypeError,
                     FormatError, IntegrityError, NonFiniteError, SingularityError)
from .imaging import Airlight, ControlCoeffs, compute_phi, restore, restore_classic, synthesize, transmission
from .losses import FeatureExtractor, LossConfig
from .net import AOSRNet, NetConfig
from .tensor import Tensor
from .trainer import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AOSRError", "ConfigError", "ContractError", "DimensionError", "DomainError", "DTypeError", "FormatError",
    "IntegrityError", "NonFiniteError", "SingularityError", "Airlight", "ControlCoeffs", "compute_phi", "restore",
    "restore_classic", "synthesize", "transmission", "FeatureExtractor", "LossConfig", "AOSRNet", "NetConfig",
    "Tensor", "TrainConfig", "evaluate", "train",
]
