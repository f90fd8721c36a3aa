"""Numerical lab for spectral scaling of feature learning in MLPs.

The hot kernels (power iteration on a Gram matrix, row orthonormalization)
come from a compiled extension when it is built, and from a numpy fallback
otherwise; ``BACKEND`` names the one in use.
"""
from ._backend import BACKEND
from .linalg import (
    Density,
    NonConvergenceWarning,
    ShapeMismatchError,
    ZeroMatrixError,
    alignment,
    frobenius_norm,
    l2_norm,
    natural_spectral_norm,
    rms_norm,
    spectral_norm,
    stable_rank,
)
from .model import Activation, MlpConfig, MlpState, backward, batch_forward_backward, forward
from .optimizer import RuleKind, UpdateRule, apply_update, train
from .parametrization import GlobalPrefactors, PznKind, init_mlp, layer_hyperparams, network_hyperparams

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Activation",
    "Density",
    "GlobalPrefactors",
    "MlpConfig",
    "MlpState",
    "NonConvergenceWarning",
    "PznKind",
    "RuleKind",
    "ShapeMismatchError",
    "UpdateRule",
    "ZeroMatrixError",
    "alignment",
    "apply_update",
    "backward",
    "batch_forward_backward",
    "forward",
    "frobenius_norm",
    "init_mlp",
    "l2_norm",
    "layer_hyperparams",
    "natural_spectral_norm",
    "network_hyperparams",
    "rms_norm",
    "spectral_norm",
    "stable_rank",
    "train",
]
