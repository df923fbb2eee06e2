"""Distributional input projection: v -> u ~ N(v, diag(lambda)).

Variances are stored as log-variances so they stay positive without any
projection step.  Sampling uses the reparameterization
``u = v + exp(log_lambda / 2) * eps`` with ``eps ~ N(0, I)``, which lets
gradients reach ``log_lambda``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

LOG_LAMBDA_MIN = -30.0
LOG_LAMBDA_MAX = 4.0
LOG_LAMBDA_INIT = -4.0


class Mode(str, enum.Enum):
    LEARNABLE = "learnable"
    FIXED = "fixed"
    DISABLED = "disabled"


@dataclass
class ProjectionParams:
    """Per-layer projection parameters.

    ``log_lambda`` has one entry per input coordinate, or a single entry
    shared by every coordinate when ``tied`` is set.  In ``FIXED`` mode
    ``log_lambda`` holds ``log(value)`` and is never updated.
    """

    dim: int
    mode: Mode = Mode.LEARNABLE
    log_lambda: np.ndarray = field(default=None)
    tied: bool = False

    def __post_init__(self):
        self.mode = Mode(self.mode)
        size = 1 if self.tied else self.dim
        if self.log_lambda is None:
            self.log_lambda = np.full(size, LOG_LAMBDA_INIT)
        self.log_lambda = np.clip(np.asarray(self.log_lambda, dtype=np.float64).reshape(-1),
                                  LOG_LAMBDA_MIN, LOG_LAMBDA_MAX)
        if self.log_lambda.shape != (size,):
            raise ValueError(f"log_lambda has shape {self.log_lambda.shape}, expected ({size},)")

    @classmethod
    def learnable(cls, dim: int, init: float = LOG_LAMBDA_INIT, tied: bool = False):
        return cls(dim, Mode.LEARNABLE, np.full(1 if tied else dim, float(init)), tied)

    @classmethod
    def fixed(cls, dim: int, variance: float):
        if variance <= 0:
            raise ValueError("fixed projection variance must be positive")
        return cls(dim, Mode.FIXED, np.full(dim, np.log(variance)))

    @classmethod
    def disabled(cls, dim: int):
        return cls(dim, Mode.DISABLED)

    @property
    def enabled(self) -> bool:
        return self.mode is not Mode.DISABLED

    @property
    def trainable(self) -> bool:
        return self.mode is Mode.LEARNABLE

    def variances(self) -> np.ndarray:
        """lambda_j for every coordinate (tied values broadcast to ``dim``)."""
        if not self.enabled:
            return np.zeros(self.dim)
        return np.broadcast_to(np.exp(self.log_lambda), (self.dim,)).copy()

    def clamp_(self) -> None:
        np.clip(self.log_lambda, LOG_LAMBDA_MIN, LOG_LAMBDA_MAX, out=self.log_lambda)


NoiseDraw = dict  # layer index -> standard-normal array of shape (..., p_l)


def _check_dim(v_shape: tuple, params: ProjectionParams) -> None:
    if len(v_shape) == 0 or v_shape[-1] != params.dim:
        raise ad.ShapeError(f"projection expects last dimension {params.dim}, got input shape {v_shape}")


def perturb(v, log_lambda, eps: np.ndarray) -> ad.Value:
    """Differentiable ``v + exp(log_lambda / 2) * eps``."""
    scale = ad.exp(ad.mul(log_lambda, 0.5))
    return ad.add(v, ad.mul(scale, eps))


def project_and_sample(v, params: ProjectionParams, rng: np.random.Generator, log_lambda=None):
    """Sample a particle ``u ~ N(v, diag(lambda))``.

    ``v`` may be an array or a :class:`~dipnet.autodiff.Value`; pass a
    ``log_lambda`` Value to differentiate through the variances.  Disabled
    projections return ``v`` untouched and consume no randomness.
    """
    shape = v.shape
    _check_dim(shape, params)
    if not params.enabled:
        return v
    eps = rng.standard_normal(shape)
    if log_lambda is None:
        log_lambda = params.log_lambda
    if isinstance(v, ad.Value) or isinstance(log_lambda, ad.Value):
        return perturb(v, log_lambda, eps)
    return v + np.exp(0.5 * np.asarray(log_lambda)) * eps


def draw_noise_trajectory(projections, rng: np.random.Generator, batch_shape: tuple = ()) -> NoiseDraw:
    """One standard-normal array per projection-enabled layer.

    ``projections`` is a sequence of :class:`ProjectionParams` (or plain layer
    widths, which are treated as enabled).  Layers are drawn in order so a
    seed fixes the whole trajectory.
    """
    draw: NoiseDraw = {}
    for l, proj in enumerate(projections):
        if isinstance(proj, ProjectionParams):
            if not proj.enabled:
                continue
            dim = proj.dim
        else:
            dim = int(proj)
        draw[l] = rng.standard_normal(tuple(batch_shape) + (dim,))
    return draw
