"""Distributional input projection networks.

Every layer input ``v`` is replaced by a sample ``u ~ N(v, diag(lambda_l))``
with learnable per-layer variances; training minimizes a Monte-Carlo NLL plus
a variance-prevention penalty and an output-stability penalty.
"""

from ._version import __version__
from .network import Deterministic, DipNet, ModelConfig, Sampled, forward, predict_averaged
from .objective import Hyperparams, LossBreakdown, total_loss
from .projection import ProjectionParams
from .training import train

__all__ = [
    "__version__",
    "Deterministic",
    "DipNet",
    "Hyperparams",
    "LossBreakdown",
    "ModelConfig",
    "ProjectionParams",
    "Sampled",
    "forward",
    "predict_averaged",
    "total_loss",
    "train",
]
