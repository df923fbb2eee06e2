"""MLPs whose layer inputs are optionally projected into N(v, Sigma_l)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import autodiff as ad
from .projection import Mode, NoiseDraw, ProjectionParams, draw_noise_trajectory, perturb

CHECKPOINT_FORMAT = "dipnet-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Deterministic:
    """All projection noise set to zero (the mean network)."""


@dataclass(frozen=True)
class Sampled:
    trajectory: NoiseDraw


ForwardMode = Union[Deterministic, Sampled]


@dataclass
class ModelConfig:
    """Architecture description; ``hidden`` lists hidden-layer widths.

    ``projection_mask`` has one flag per affine layer (``len(hidden) + 1``);
    ``None`` enables a projection in front of every layer.
    """

    input_dim: int
    hidden: list = field(default_factory=lambda: [100, 100])
    output_dim: int = 1
    activation: str = "relu"
    task: str = "regression"
    projection: str = "learnable"  # learnable | fixed | disabled
    projection_mask: Optional[list] = None
    fixed_variance: float = 0.5
    tied: bool = False
    init_log_lambda: float = -4.0

    def __post_init__(self):
        if self.activation not in ad.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.task not in ("regression", "classification"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.projection not in ("learnable", "fixed", "disabled"):
            raise ValueError(f"unknown projection mode {self.projection!r}")
        if self.task == "classification" and self.output_dim < 2:
            raise ValueError("classification needs output_dim >= 2 classes")
        n_layers = len(self.hidden) + 1
        if self.projection_mask is not None and len(self.projection_mask) != n_layers:
            raise ValueError(f"projection_mask needs {n_layers} entries, got {len(self.projection_mask)}")

    @property
    def dims(self) -> list:
        return [self.input_dim, *self.hidden, self.output_dim]

    def mask(self) -> list:
        n_layers = len(self.hidden) + 1
        if self.projection == "disabled":
            return [False] * n_layers
        if self.projection_mask is None:
            return [True] * n_layers
        return [bool(m) for m in self.projection_mask]


class DipNet:
    """Ordered affine layers, each preceded by a (possibly disabled) projection.

    ``weights[l]`` has shape ``(p_l, p_{l+1})`` so that a layer computes
    ``act(u @ W + b)``.  The last layer is always linear.
    """

    def __init__(self, weights, biases, projections, activation="relu", task="regression"):
        if not (len(weights) == len(biases) == len(projections)):
            raise ValueError("weights, biases and projections must have one entry per layer")
        for l, (w, b, proj) in enumerate(zip(weights, biases, projections)):
            if b.shape != (w.shape[1],):
                raise ValueError(f"layer {l}: bias shape {b.shape} does not match weights {w.shape}")
            if proj.dim != w.shape[0]:
                raise ValueError(f"layer {l}: projection dim {proj.dim} != input dim {w.shape[0]}")
            if l + 1 < len(weights) and weights[l + 1].shape[0] != w.shape[1]:
                raise ValueError(f"layer {l}: output dim {w.shape[1]} != next input dim {weights[l + 1].shape[0]}")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.projections = list(projections)
        self.activation = activation
        self.task = task

    @classmethod
    def from_config(cls, config: ModelConfig, seed: int = 0) -> "DipNet":
        rng = np.random.default_rng([int(seed), 0x1A7E])
        dims = config.dims
        gain = 2.0 if config.activation == "relu" else 1.0
        weights, biases, projections = [], [], []
        for l, enabled in enumerate(config.mask()):
            fan_in, fan_out = dims[l], dims[l + 1]
            weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(gain / fan_in))
            biases.append(np.zeros(fan_out))
            if not enabled:
                projections.append(ProjectionParams.disabled(fan_in))
            elif config.projection == "fixed":
                projections.append(ProjectionParams.fixed(fan_in, config.fixed_variance))
            else:
                projections.append(ProjectionParams.learnable(fan_in, config.init_log_lambda, config.tied))
        return cls(weights, biases, projections, config.activation, config.task)

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "DipNet":
        projections = [ProjectionParams(p.dim, p.mode, p.log_lambda.copy(), p.tied) for p in self.projections]
        return DipNet([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                      projections, self.activation, self.task)

    def leaves(self) -> dict:
        """Fresh differentiable leaves for every trainable array, keyed by name."""
        out = {}
        for l in range(self.num_layers):
            out[f"W{l}"] = ad.Value(self.weights[l], requires_grad=True)
            out[f"b{l}"] = ad.Value(self.biases[l], requires_grad=True)
            if self.projections[l].trainable:
                out[f"s{l}"] = ad.Value(self.projections[l].log_lambda, requires_grad=True)
        return out

    def arrays(self) -> dict:
        """The live parameter arrays, keyed like :meth:`leaves`."""
        out = {}
        for l in range(self.num_layers):
            out[f"W{l}"] = self.weights[l]
            out[f"b{l}"] = self.biases[l]
            if self.projections[l].trainable:
                out[f"s{l}"] = self.projections[l].log_lambda
        return out

    def draw(self, rng: np.random.Generator, batch_shape: tuple = ()) -> Sampled:
        return Sampled(draw_noise_trajectory(self.projections, rng, batch_shape))


def forward(model: DipNet, x, mode: ForwardMode = Deterministic(), leaves: Optional[dict] = None) -> ad.Value:
    """Run the network: ``u_l = v_{l-1} + eta_l``, ``v_l = act(u_l W_l + b_l)``.

    Without ``leaves`` the parameters enter as constants.  Classification
    networks return logits.
    """
    v = ad.as_value(x)
    if v.ndim == 0 or v.shape[-1] != model.input_dim:
        raise ad.ShapeError(f"forward: expected inputs with last dimension {model.input_dim}, got {v.shape}")
    trajectory = mode.trajectory if isinstance(mode, Sampled) else None
    act = ad.ACTIVATIONS[model.activation]
    last = model.num_layers - 1
    for l in range(model.num_layers):
        proj = model.projections[l]
        if trajectory is not None and proj.enabled:
            eps = trajectory.get(l)
            if eps is None:
                raise ad.ShapeError(f"forward: trajectory has no draw for layer {l}")
            if eps.shape != v.shape:
                raise ad.ShapeError(f"forward: layer {l} noise shape {eps.shape} != input shape {v.shape}")
            s = leaves[f"s{l}"] if leaves is not None and proj.trainable else proj.log_lambda
            v = perturb(v, s, eps)
        W = leaves[f"W{l}"] if leaves is not None else model.weights[l]
        b = leaves[f"b{l}"] if leaves is not None else model.biases[l]
        z = ad.add(ad.matmul(v, W), b)
        v = z if l == last else act(z)
    return v


def forward_array(model: DipNet, x, mode: ForwardMode = Deterministic()) -> np.ndarray:
    return forward(model, np.asarray(x, dtype=np.float64), mode).data


@dataclass
class Prediction:
    """Averaged network output; ``classes`` is set for classification."""

    value: np.ndarray
    classes: Optional[np.ndarray] = None


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def sampled_outputs(model: DipNet, x, k: int, rng: np.random.Generator) -> np.ndarray:
    """Stack of ``k`` independent sampled forwards, shape ``(k, *x.shape[:-1], q)``."""
    x = np.asarray(x, dtype=np.float64)
    tiled = np.broadcast_to(x, (k,) + x.shape)
    mode = model.draw(rng, tiled.shape[:-1])
    return forward(model, np.ascontiguousarray(tiled), mode).data


def predict_averaged(model: DipNet, x, k: int, rng: np.random.Generator) -> Prediction:
    """Mean over ``k`` sampled forwards.

    Classification averages softmax probabilities and reports the argmax.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    outs = sampled_outputs(model, x, k, rng)
    if model.task == "classification":
        probs = softmax(outs).mean(axis=0)
        return Prediction(probs, probs.argmax(axis=-1))
    return Prediction(outs.mean(axis=0))


# -- checkpoints -------------------------------------------------------------

def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config) -> str:
    if hasattr(config, "__dataclass_fields__"):
        config = asdict(config)
    return hashlib.sha256(_canonical_json(config).encode()).hexdigest()[:16]


def to_dict(model: DipNet, config_digest: str = "") -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "task": model.task,
        "activation": model.activation,
        "dims": [model.input_dim] + [w.shape[1] for w in model.weights],
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "projections": [
            {"mode": p.mode.value, "tied": p.tied, "log_lambda": p.log_lambda.tolist()}
            for p in model.projections
        ],
        "config_hash": config_digest,
    }


def from_dict(d: dict) -> DipNet:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a dipnet checkpoint")
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')}")
    weights = [np.array(w, dtype=np.float64).reshape(a, b)
               for w, a, b in zip(d["weights"], d["dims"][:-1], d["dims"][1:])]
    biases = [np.array(b, dtype=np.float64) for b in d["biases"]]
    projections = [
        ProjectionParams(w.shape[0], Mode(p["mode"]), np.array(p["log_lambda"]), p["tied"])
        for w, p in zip(weights, d["projections"])
    ]
    return DipNet(weights, biases, projections, d["activation"], d["task"])


def save_checkpoint(model: DipNet, path, config_digest: str = "") -> None:
    Path(path).write_text(_canonical_json(to_dict(model, config_digest)) + "\n")


def load_checkpoint(path) -> tuple:
    """Return ``(model, config_hash)``."""
    d = json.loads(Path(path).read_text())
    return from_dict(d), d.get("config_hash", "")

