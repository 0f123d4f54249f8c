"""Autoregressive exploration policies for continuous control at high action rates."""

from .ar_core import AcfTable, ArModel, ArModelError, acf, alpha_for_rho1, coeffs_binomial, coeffs_from_roots, is_stationary
from .envs import HistoryWrapper, SquareEnv, VecSquareEnv
from .policy import ArPolicy, ExtendedState, GaussianPolicy
from .trainer import PpoTrainer, TrainConfig

__version__ = "0.1.0"

__all__ = [
    "AcfTable",
    "ArModel",
    "ArModelError",
    "ArPolicy",
    "ExtendedState",
    "GaussianPolicy",
    "HistoryWrapper",
    "PpoTrainer",
    "SquareEnv",
    "TrainConfig",
    "VecSquareEnv",
    "acf",
    "alpha_for_rho1",
    "coeffs_binomial",
    "coeffs_from_roots",
    "is_stationary",
]
