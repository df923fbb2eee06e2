"""Training objective: Monte-Carlo NLL + variance-prevention + stability penalty."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .network import DipNet, Sampled, forward
from .projection import draw_noise_trajectory


class ConfigError(ValueError):
    """Invalid hyperparameter or run configuration."""


@dataclass
class Hyperparams:
    """Regularization weights, sampling counts and optimizer settings.

    ``sigma_obs=None`` means plain squared error, i.e. the Gaussian NLL with
    sigma = sqrt(1/2) without the rounding that computing 1/(2 sigma^2)
    would introduce.
    """

    alpha: float = 1e-3
    beta: float = 1e-3
    lambda_stab: float = 0.1
    m: int = 2
    k: int = 8
    sigma_obs: Optional[float] = None
    lr: float = 3e-4
    epochs: int = 40
    batch_size: int = 64
    momentum: float = 0.0
    reduction: str = "sum"

    def validate(self) -> "Hyperparams":
        errors = []
        for name in ("alpha", "beta", "lambda_stab"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be >= 0")
        if self.m < 1:
            errors.append("m must be >= 1")
        if self.k < 1:
            errors.append("k must be >= 1")
        if self.lambda_stab > 0 and self.m < 2:
            errors.append("m >= 2 required when lambda_stab > 0")
        if self.sigma_obs is not None and self.sigma_obs <= 0:
            errors.append("sigma_obs must be positive")
        if self.lr <= 0:
            errors.append("lr must be positive")
        if self.epochs < 0:
            errors.append("epochs must be >= 0")
        if self.batch_size < 1:
            errors.append("batch_size must be >= 1")
        if not 0 <= self.momentum < 1:
            errors.append("momentum must be in [0, 1)")
        if self.reduction not in ("sum", "mean"):
            errors.append("reduction must be 'sum' or 'mean'")
        if errors:
            raise ConfigError("; ".join(errors))
        return self


@dataclass
class LossBreakdown:
    nll: float
    trace_penalty: float
    logdet_penalty: float
    stability: float
    total: float
    node: Optional[ad.Value] = None

    def as_dict(self) -> dict:
        return {
            "nll": self.nll,
            "trace_penalty": self.trace_penalty,
            "logdet_penalty": self.logdet_penalty,
            "stability": self.stability,
            "total": self.total,
        }


def _squared_error_scale(sigma_obs: Optional[float]) -> float:
    return 1.0 if sigma_obs is None else 1.0 / (2.0 * sigma_obs * sigma_obs)


def nll_term(outputs, y, task: str = "regression", sigma_obs: Optional[float] = None,
             reduction: str = "sum") -> ad.Value:
    """``-(1/m) sum_j ln P(y | f_j)`` up to an additive constant.

    ``outputs`` has shape ``(m, ..., q)``; the leading axis indexes
    trajectories.  Regression uses ``||f_j - y||^2 / (2 sigma_obs^2)`` and
    classification the softmax cross-entropy on logits.  Examples are summed
    (or averaged with ``reduction="mean"``).
    """
    outputs = ad.as_value(outputs)
    m = outputs.shape[0]
    if task == "classification":
        per = ad.sum(ad.softmax_cross_entropy(outputs, np.broadcast_to(np.asarray(y), outputs.shape[:-1])))
    else:
        y = np.asarray(y, dtype=np.float64)
        if y.shape != outputs.shape[1:]:
            y = y.reshape(outputs.shape[1:])
        per = ad.sum(ad.square(ad.sub(outputs, y)))
        scale = _squared_error_scale(sigma_obs)
        if scale != 1.0:
            per = ad.mul(per, scale)
    n_examples = int(np.prod(outputs.shape[1:-1])) if outputs.ndim > 2 else 1
    denom = float(m) if reduction == "sum" else float(m * n_examples)
    return ad.mul(per, 1.0 / denom)


def _penalty_parts(projections, alpha, beta, leaves=None):
    trace = ad.Value(0.0)
    logdet = ad.Value(0.0)
    for l, proj in enumerate(projections):
        if not proj.trainable:
            continue
        s = leaves[f"s{l}"] if leaves is not None else ad.Value(proj.log_lambda)
        # tied projections share one log-variance across all coordinates
        reps = proj.dim if proj.tied else 1
        trace = ad.add(trace, ad.mul(ad.sum(ad.exp(s)), float(alpha * reps)))
        logdet = ad.add(logdet, ad.mul(ad.sum(s), float(-beta * reps)))
    return trace, logdet


def variance_prevention_penalty(projections, alpha: float, beta: float, leaves=None) -> ad.Value:
    """``alpha * sum(lambda) - beta * sum(ln lambda)`` over learnable projections."""
    trace, logdet = _penalty_parts(projections, alpha, beta, leaves)
    return ad.add(trace, logdet)


def stability_penalty(outputs, lambda_stab: float, reduction: str = "sum") -> ad.Value:
    """Unbiased pairwise estimate of ``lambda_stab * tr Var[f]``.

    ``outputs`` has shape ``(m, ..., q)``.  For each example the squared
    distances between all unordered trajectory pairs are summed and scaled by
    ``lambda_stab / (m (m - 1))``; examples are then summed.
    """
    outputs = ad.as_value(outputs)
    m = outputs.shape[0]
    if m < 2:
        raise ConfigError("stability penalty needs m >= 2 trajectories")
    acc = None
    for j1 in range(m):
        for j2 in range(j1 + 1, m):
            d = ad.sum(ad.square(ad.sub(outputs[j1], outputs[j2])))
            acc = d if acc is None else ad.add(acc, d)
    scale = lambda_stab / (m * (m - 1))
    if reduction == "mean" and outputs.ndim > 2:
        scale /= int(np.prod(outputs.shape[1:-1]))
    return ad.mul(acc, float(scale))


def total_loss(model: DipNet, batch, hp: Hyperparams, rng: np.random.Generator, leaves=None,
               penalty_scale: float = 1.0, trajectory=None) -> LossBreakdown:
    """The full practical loss on one batch, as a differentiable breakdown.

    ``batch`` is ``(x, y)`` with ``x`` of shape ``(n, p)``.  ``m`` noise
    trajectories are drawn per example unless ``trajectory`` (a draw with
    batch shape ``(m, n)``) is given.  ``penalty_scale`` weights the
    dataset-level variance penalty, e.g. ``batch_size / n_train`` so one
    epoch of mini-batches adds it once.
    """
    x, y = batch
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"batch must be a non-empty (n, p) array, got {x.shape}")
    if leaves is None:
        leaves = model.leaves()
    m = hp.m
    tiled = np.ascontiguousarray(np.broadcast_to(x, (m,) + x.shape))
    if trajectory is None:
        trajectory = draw_noise_trajectory(model.projections, rng, tiled.shape[:-1])
    outputs = forward(model, tiled, Sampled(trajectory), leaves)

    nll = nll_term(outputs, y, model.task, hp.sigma_obs, hp.reduction)
    trace, logdet = _penalty_parts(model.projections, hp.alpha, hp.beta, leaves)
    if penalty_scale != 1.0:
        trace = ad.mul(trace, float(penalty_scale))
        logdet = ad.mul(logdet, float(penalty_scale))
    if hp.lambda_stab > 0:
        stab = stability_penalty(outputs, hp.lambda_stab, hp.reduction)
    else:
        stab = ad.Value(0.0)
    total = ad.add(ad.add(ad.add(nll, trace), logdet), stab)
    return LossBreakdown(nll.item(), trace.item(), logdet.item(), stab.item(), total.item(), total)


def penalty_minimizer(alpha: float, beta: float) -> float:
    """Unique minimizer of ``alpha*lam - beta*ln(lam)`` on lam > 0."""
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    return beta / alpha


def linear_expected_loss(theta, x, y, variances, alpha, beta, lambda_stab, sigma_obs=None) -> float:
    """Closed-form expectation of the loss for a single linear layer ``f = theta^T (x + eta)``.

    With ``eta ~ N(0, diag(variances))`` the output variance is
    ``v = theta^T Sigma theta``, so ``E||f - y||^2 = (theta^T x - y)^2 + v``
    and the stability estimator has mean ``lambda_stab * v`` per example.
    """
    theta = np.asarray(theta, dtype=np.float64)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    lam = np.asarray(variances, dtype=np.float64)
    v = float(theta @ (lam * theta))
    resid = x @ theta - y
    nll = _squared_error_scale(sigma_obs) * float(np.sum(resid ** 2) + len(y) * v)
    penalty = alpha * float(np.sum(lam)) - beta * float(np.sum(np.log(lam)))
    return nll + penalty + lambda_stab * len(y) * v
