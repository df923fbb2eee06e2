"""Input attacks (Gaussian noise, FGSM) and the randomized-smoothing baseline."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .network import Deterministic, DipNet, ForwardMode, ModelConfig, forward
from .objective import Hyperparams, nll_term

ATTACK_KINDS = ("none", "gaussian", "fgsm")
ATTACK_PHASES = ("train", "eval")


def input_gradient(model: DipNet, x, y, mode: ForwardMode = Deterministic(), sigma_obs=None) -> np.ndarray:
    """``d loss / d x`` for a single forward pass in ``mode``.

    The loss is the squared error (regression) or cross-entropy
    (classification) summed over the batch, so each row of the result is the
    gradient for that example alone.  Model arrays are not touched.
    """
    xv = ad.Value(np.asarray(x, dtype=np.float64), requires_grad=True)
    out = forward(model, xv, mode)
    loss = nll_term(ad.reshape(out, (1,) + out.shape), y, model.task, sigma_obs)
    ad.backward(loss)
    return xv.grad


def gaussian_attack(x, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """``x + eta`` with ``eta ~ N(0, sigma^2 I)``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x = np.asarray(x, dtype=np.float64)
    return x + sigma * rng.standard_normal(x.shape)


def fgsm_attack(model: DipNet, x, y, epsilon: float, mode: ForwardMode = Deterministic()) -> np.ndarray:
    """Single-step sign attack ``x + epsilon * sign(grad_x loss)``.

    The default attacks the mean network (all projection noise zero).
    Coordinates with a zero gradient are left unchanged.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x = np.asarray(x, dtype=np.float64)
    return x + epsilon * np.sign(input_gradient(model, x, y, mode))


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "none"
    sigma: float = 0.0
    epsilon: float = 0.0
    phase: str = "eval"

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack {self.kind!r}")
        if self.phase not in ATTACK_PHASES:
            raise ValueError(f"unknown attack phase {self.phase!r}")
        if self.kind == "gaussian" and not self.sigma > 0:
            raise ValueError("gaussian attack needs sigma > 0")
        if self.kind == "fgsm" and not self.epsilon > 0:
            raise ValueError("fgsm attack needs epsilon > 0")

    @property
    def active(self) -> bool:
        return self.kind != "none"

    @property
    def applies_to_training(self) -> bool:
        return self.active and self.phase == "train"

    @property
    def applies_to_eval(self) -> bool:
        return self.active and self.phase == "eval"

    def apply(self, model: DipNet, x, y, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "gaussian":
            return gaussian_attack(x, self.sigma, rng)
        if self.kind == "fgsm":
            return fgsm_attack(model, x, y, self.epsilon)
        return np.asarray(x, dtype=np.float64)


def randomized_smoothing_mode(config: ModelConfig, hp: Hyperparams, sigma: float):
    """Turn a config into the randomized-smoothing baseline.

    Fixed, non-learnable N(0, sigma^2) noise on the network input only; no
    variance or stability penalties; one sample at prediction time.
    ``sigma == 0`` degenerates to the standard network.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    n_layers = len(config.hidden) + 1
    if sigma == 0:
        new_config = dataclasses.replace(config, projection="disabled", projection_mask=None)
    else:
        new_config = dataclasses.replace(config, projection="fixed", fixed_variance=float(sigma) ** 2,
                                         projection_mask=[True] + [False] * (n_layers - 1), tied=False)
    new_hp = dataclasses.replace(hp, alpha=0.0, beta=0.0, lambda_stab=0.0, m=1, k=1)
    return new_config, new_hp
