"""Mini-batch gradient descent on the full objective."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from ._version import __version__
from .data import DatasetSplit
from .network import DipNet, predict_averaged, save_checkpoint
from .objective import Hyperparams, total_loss
from .projection import LOG_LAMBDA_MAX, LOG_LAMBDA_MIN

METRICS_SCHEMA = 1


class DivergenceError(FloatingPointError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainState:
    model: DipNet
    hp: Hyperparams
    rng_seed: int
    epoch: int = 0
    history: list = field(default_factory=list)


def batch_rng(seed: int, epoch: int, batch: int) -> np.random.Generator:
    """Noise stream for one mini-batch, reproducible from its coordinates."""
    return np.random.default_rng([int(seed), int(epoch), int(batch)])


def eval_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(epoch), 2**32 - 1])


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([int(seed), int(epoch), 0x0DE5]).permutation(n)


def sgd_step(model: DipNet, grads: dict, lr: float, velocity: Optional[dict] = None,
             momentum: float = 0.0) -> None:
    """In-place ``p <- p - lr * g`` on every key of ``grads``.

    Log-variances are clamped afterwards.  Projections that are not
    learnable have no key in ``grads`` and are left alone.
    """
    params = model.arrays()
    for name, g in grads.items():
        if name not in params:
            continue
        if momentum and velocity is not None:
            v = velocity.get(name)
            v = g.copy() if v is None else momentum * v + g
            velocity[name] = v
            g = v
        p = params[name]
        p -= lr * g
        if name.startswith("s"):
            np.clip(p, LOG_LAMBDA_MIN, LOG_LAMBDA_MAX, out=p)


def regression_mse(model: DipNet, X, y, k: int, rng, y_std: float = 1.0) -> float:
    """MSE of the k-averaged prediction, in original target units."""
    pred = predict_averaged(model, X, k, rng).value.reshape(-1)
    return float(np.mean((pred - np.asarray(y).reshape(-1)) ** 2)) * y_std ** 2


def evaluate(model: DipNet, X, y, k: int, rng, y_std: float = 1.0) -> dict:
    if len(y) == 0:
        return {}
    if model.task == "classification":
        pred = predict_averaged(model, X, k, rng)
        nll = -np.log(np.take_along_axis(pred.value, np.asarray(y, dtype=np.intp)[:, None], 1) + 1e-300)
        return {"accuracy": float(np.mean(pred.classes == y)), "nll": float(np.mean(nll))}
    return {"mse": regression_mse(model, X, y, k, rng, y_std)}


def train(model: DipNet, data: DatasetSplit, hp: Hyperparams, seed: int,
          attack=None, metrics_path=None, checkpoint_path=None, checkpoint_every: int = 0,
          config_digest: str = "", on_epoch: Optional[Callable] = None,
          timings_path=None, on_step: Optional[Callable] = None) -> TrainState:
    """Train ``model`` in place for ``hp.epochs`` epochs.

    Each mini-batch draws fresh trajectories from ``batch_rng(seed, epoch,
    batch)``.  ``attack`` (a :class:`~dipnet.robustness.AttackSpec` with
    train phase) perturbs every visited batch.  When ``metrics_path`` is given
    one JSON record per epoch is appended; wall-clock times go to the
    separate ``timings_path`` so the metrics file stays reproducible.
    ``on_step(epoch, batch, parts)`` sees every batch's loss breakdown.
    """
    hp.validate()
    X, y = data.train.X, data.train.y
    n = len(y)
    if n == 0:
        raise ValueError("empty training set")
    state = TrainState(model, hp, seed)
    velocity: dict = {}
    y_col = y.reshape(-1, 1) if model.task == "regression" else y
    for epoch in range(hp.epochs):
        t0 = time.perf_counter()
        order = epoch_order(seed, epoch, n)
        sums = np.zeros(5)
        for b, start in enumerate(range(0, n, hp.batch_size)):
            idx = order[start:start + hp.batch_size]
            rng = batch_rng(seed, epoch, b)
            xb = X[idx]
            if attack is not None and attack.applies_to_training:
                xb = attack.apply(model, xb, y_col[idx], rng)
            leaves = model.leaves()
            parts = total_loss(model, (xb, y_col[idx]), hp, rng, leaves, penalty_scale=len(idx) / n)
            if not math.isfinite(parts.total):
                raise DivergenceError(epoch, b, parts.total)
            ad.backward(parts.node)
            if on_step is not None:
                on_step(epoch, b, parts)
            sgd_step(model, {k: v.grad for k, v in leaves.items()}, hp.lr, velocity, hp.momentum)
            sums += (parts.nll, parts.trace_penalty, parts.logdet_penalty, parts.stability, parts.total)
        losses = dict(zip(("nll", "trace_penalty", "logdet_penalty", "stability", "total"), sums.tolist()))
        val = evaluate(model, data.val.X, data.val.y, hp.k, eval_rng(seed, epoch), data.y_std)
        state.epoch = epoch + 1
        record = {"epoch": epoch + 1, "loss": losses, "val": val}
        state.history.append(record)
        if metrics_path is not None:
            row = {"schema": METRICS_SCHEMA, "kind": "epoch", "config_hash": config_digest, "seed": seed,
                   "version": __version__, **record}
            with open(metrics_path, "a") as fh:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        if timings_path is not None:
            with open(timings_path, "a") as fh:
                fh.write(json.dumps({"epoch": epoch + 1, "wall_time": time.perf_counter() - t0}) + "\n")
        if checkpoint_path is not None and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
            save_checkpoint(model, Path(checkpoint_path), config_digest)
        if on_epoch is not None:
            on_epoch(state)
    if checkpoint_path is not None:
        save_checkpoint(model, Path(checkpoint_path), config_digest)
    return state
