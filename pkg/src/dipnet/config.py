"""Run configuration: a YAML document with data / model / hp / attack blocks."""

from __future__ import annotations

import copy
import dataclasses
import re
from pathlib import Path
from typing import Any, Optional

import yaml

from .data import DataError, DatasetSplit, Schema, load_csv, split, synth_regression
from .network import ModelConfig, config_hash
from .objective import ConfigError, Hyperparams
from .robustness import AttackSpec, randomized_smoothing_mode

DEFAULTS: dict = {
    "seed": 0,
    "method": "dipnet",
    "data": {
        "path": None,
        "synth": {"n": 8000, "d": 8, "noise_sigma": 0.5, "seed": 1234, "ood_shift": 0.0, "ood_fraction": 0.0},
        "schema": {"target": "y", "features": None, "ood_column": None, "ood_threshold": None,
                   "ood_quantile": None},
        "test_fraction": 0.3,
        "val_fraction": 0.0,
        "train_fraction": 1.0,
        "split_seed": None,
    },
    "model": {
        "hidden": [100, 100],
        "activation": "relu",
        "task": "regression",
        "num_classes": None,
        "projection": None,
        "projection_mask": None,
        "tied": False,
        "init_log_lambda": -4.0,
        "rs_sigma": 0.01,
    },
    "hp": dataclasses.asdict(Hyperparams()),
    "attack": {"kind": "none", "sigma": 0.0, "epsilon": 0.0, "phase": "eval"},
}

_FIXED = re.compile(r"^fixed\(([^)]+)\)$")


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-3`` (no dot) as a float."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
    |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
    |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
    |[-+]?\.(?:inf|Inf|INF)
    |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


def load_yaml(text: str):
    return yaml.load(text, Loader=_Loader)


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_assignment(text: str) -> dict:
    """``a.b.c=value`` -> nested dict; the value is parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    return nested(key.strip(), load_yaml(raw) if raw != "" else None)


def _check_keys(given: dict, allowed: dict, where: str, errors: list) -> None:
    for key, value in given.items():
        if key not in allowed:
            errors.append(f"unknown key {where}{key}")
        elif isinstance(allowed[key], dict) and isinstance(value, dict):
            _check_keys(value, allowed[key], f"{where}{key}.", errors)


def method_parts(method: str):
    """``(name, fixed_variance)`` for a method tag."""
    if method in ("standard", "dipnet", "rs"):
        return method, None
    match = _FIXED.match(str(method).replace(" ", ""))
    if match:
        try:
            return "fixed", float(match.group(1))
        except ValueError:
            pass
    raise ConfigError(f"unknown method {method!r}; expected standard | dipnet | rs | fixed(<variance>)")


@dataclasses.dataclass
class RunConfig:
    raw: dict
    seed: int
    method: str
    model: ModelConfig
    hp: Hyperparams
    attack: AttackSpec

    @property
    def digest(self) -> str:
        return config_hash(self.raw)

    def dump(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=True)

    def load_split(self) -> DatasetSplit:
        return load_data(self.raw["data"], self.seed)


def build(raw: dict, input_dim: Optional[int] = None) -> RunConfig:
    """Validate a merged config dict.  All errors are collected before raising."""
    errors: list = []
    _check_keys(raw, DEFAULTS, "", errors)
    raw = deep_merge(DEFAULTS, raw)
    try:
        name, fixed_var = method_parts(raw["method"])
    except ConfigError as exc:
        errors.append(str(exc))
        name, fixed_var = "dipnet", None

    m = raw["model"]
    implied = {"standard": "disabled", "dipnet": "learnable", "rs": "fixed", "fixed": "fixed"}[name]
    if m.get("projection") not in (None, implied):
        errors.append(f"model.projection={m['projection']!r} conflicts with method {raw['method']!r}")
    if name == "standard" and m.get("projection_mask"):
        if any(m["projection_mask"]):
            errors.append("method 'standard' cannot enable projections in model.projection_mask")
    if fixed_var is not None and fixed_var <= 0:
        errors.append("fixed(<variance>) needs a positive variance")

    d = raw["data"]
    if d.get("path") is None and not d.get("synth"):
        errors.append("data needs either path or synth")
    if not 0 < float(d["test_fraction"]) < 1:
        errors.append("data.test_fraction must be in (0, 1)")
    if not 0 < float(d["train_fraction"]) <= 1:
        errors.append("data.train_fraction must be in (0, 1]")

    hp = model = attack = None
    try:
        hp = Hyperparams(**raw["hp"])
        if name == "standard":
            hp = dataclasses.replace(hp, alpha=0.0, beta=0.0, lambda_stab=0.0, m=1, k=1)
        hp.validate()
    except (TypeError, ConfigError) as exc:
        errors.append(f"hp: {exc}")
    try:
        attack = AttackSpec(**raw["attack"])
    except (TypeError, ValueError) as exc:
        errors.append(f"attack: {exc}")
    try:
        n_out = int(m["num_classes"]) if m["task"] == "classification" else 1
        if input_dim is None:
            input_dim = int(d["synth"]["d"]) if not d.get("path") else 1
        model = ModelConfig(
            input_dim=int(input_dim),
            hidden=list(m["hidden"]),
            output_dim=n_out,
            activation=m["activation"],
            task=m["task"],
            projection=implied,
            projection_mask=m["projection_mask"],
            fixed_variance=fixed_var if fixed_var is not None else 0.5,
            tied=bool(m["tied"]),
            init_log_lambda=float(m["init_log_lambda"]),
        )
        if name == "rs" and hp is not None:
            model, hp = randomized_smoothing_mode(model, hp, float(m["rs_sigma"]))
    except (TypeError, ValueError, KeyError) as exc:
        errors.append(f"model: {exc}")
    if errors:
        raise ConfigError("; ".join(errors))
    return RunConfig(raw, int(raw["seed"]), str(raw["method"]), model, hp, attack)


def load(path: Optional[str] = None, overrides: tuple = ()) -> dict:
    """Read a YAML config (or start from defaults) and apply overrides."""
    raw: dict = {}
    if path is not None:
        try:
            raw = load_yaml(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    for ov in overrides:
        raw = deep_merge(raw, ov)
    return deep_merge(DEFAULTS, raw)


def load_data(d: dict, seed: int) -> DatasetSplit:
    schema = Schema(**d["schema"])
    if d.get("path"):
        table = load_csv(d["path"], schema)
    else:
        table = synth_regression(**d["synth"])
    split_seed = seed if d.get("split_seed") is None else int(d["split_seed"])
    return split(table, float(d["test_fraction"]), split_seed, schema,
                 train_fraction=float(d["train_fraction"]), val_fraction=float(d["val_fraction"]))


def resolve(raw: dict) -> tuple:
    """Build the config and its data split; the model input width comes from the data."""
    cfg = build(raw)
    try:
        data = cfg.load_split()
    except (DataError, OSError) as exc:
        raise ConfigError(f"data: {exc}") from None
    cfg = build(raw, input_dim=data.train.X.shape[1])
    return cfg, data


def nested(dotted: str, value: Any) -> dict:
    """``nested("a.b", 1) == {"a": {"b": 1}}``."""
    out: dict = {}
    node = out
    parts = dotted.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out
