"""Single runs and method-comparison grids (the tabular MLP protocols)."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import config as cfgmod
from ._version import __version__
from .network import DipNet
from .robustness import AttackSpec, fgsm_attack
from .training import DivergenceError, regression_mse, train

log = logging.getLogger(__name__)


def eval_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), 0xE7A1])


def attacked_inputs(model: DipNet, X, y, attack: AttackSpec, rng) -> np.ndarray:
    """Eval-time attack applied once per example."""
    if not attack.active:
        return X
    y_col = y.reshape(-1, 1) if model.task == "regression" else y
    return attack.apply(model, X, y_col, rng)


def run_single(raw: dict, eval_epsilon: float = 0.1) -> dict:
    """Train one config and report clean / FGSM / OOD test MSE in target units."""
    cfg, data = cfgmod.resolve(raw)
    model = DipNet.from_config(cfg.model, cfg.seed)
    train(model, data, cfg.hp, cfg.seed, attack=cfg.attack if cfg.attack.applies_to_training else None)
    rng = eval_rng(cfg.seed)
    X, y = data.test_id.X, data.test_id.y
    out = {"clean_mse": regression_mse(model, X, y, cfg.hp.k, rng, data.y_std)}
    if eval_epsilon > 0:
        X_adv = fgsm_attack(model, X, y.reshape(-1, 1), eval_epsilon)
        out["adv_mse"] = regression_mse(model, X_adv, y, cfg.hp.k, rng, data.y_std)
    if len(data.test_ood):
        out["ood_mse"] = regression_mse(model, data.test_ood.X, data.test_ood.y, cfg.hp.k, rng, data.y_std)
    lam = [float(np.exp(p.log_lambda).mean()) for p in model.projections if p.trainable]
    out["mean_lambda"] = lam
    return out


@dataclass
class BenchSpec:
    """A grid of method x architecture x fractions x seed."""

    base: dict = field(default_factory=dict)
    methods: list = field(default_factory=lambda: ["standard", "dipnet"])
    architectures: list = field(default_factory=lambda: ["2+100", "4+100", "4+400"])
    test_fractions: list = field(default_factory=lambda: [0.3])
    train_fractions: list = field(default_factory=lambda: [1.0])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    eval_epsilon: float = 0.1
    reference: str = "standard"
    challenger: str = "dipnet"

    @classmethod
    def from_dict(cls, d: dict) -> "BenchSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise cfgmod.ConfigError(f"unknown bench keys {sorted(unknown)}")
        spec = cls(**d)
        for arch in spec.architectures:
            parse_architecture(arch)
        for method in spec.methods:
            cfgmod.method_parts(method)
        return spec

    def cells(self) -> list:
        return list(itertools.product(self.architectures, self.test_fractions, self.train_fractions, self.seeds))


def parse_architecture(tag: str) -> list:
    """``"4+100"`` -> four hidden layers of 100 units."""
    try:
        depth, width = (int(t) for t in str(tag).split("+"))
    except ValueError:
        raise cfgmod.ConfigError(f"architecture {tag!r} is not of the form <layers>+<width>") from None
    if depth < 1 or width < 1:
        raise cfgmod.ConfigError(f"architecture {tag!r} needs positive layers and width")
    return [width] * depth


def cell_config(spec: BenchSpec, method: str, arch: str, test_fraction: float, train_fraction: float,
                seed: int) -> dict:
    override = {
        "seed": seed,
        "method": method,
        "model": {"hidden": parse_architecture(arch)},
        "data": {"test_fraction": test_fraction, "train_fraction": train_fraction},
    }
    return cfgmod.deep_merge(cfgmod.deep_merge(cfgmod.DEFAULTS, spec.base), override)


def _run_job(job):
    raw, eps = job
    try:
        return run_single(raw, eps), None
    except (DivergenceError, FloatingPointError, ValueError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def run_bench(spec: BenchSpec, jobs: int = 1) -> list:
    """Run every (method, cell) pair.  Failures are recorded, the grid continues.

    Returns one dict per run in grid order, so the output does not depend on
    ``jobs``.
    """
    keys, work = [], []
    for arch, tf, trf, seed in spec.cells():
        for method in spec.methods:
            keys.append({"method": method, "arch": arch, "test_fraction": tf, "train_fraction": trf, "seed": seed})
            work.append((cell_config(spec, method, arch, tf, trf, seed), spec.eval_epsilon))
    # validate every cell before any compute
    for raw, _ in work:
        cfgmod.build(raw)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_job, work))
    else:
        results = [_run_job(w) for w in work]
    rows = []
    for key, (res, err) in zip(keys, results):
        row = dict(key)
        if err is not None:
            log.warning("cell %s failed: %s", key, err)
            row["error"] = err
        else:
            row.update({k: v for k, v in res.items() if k != "mean_lambda"})
        rows.append(row)
    return rows


METRICS = ("clean_mse", "adv_mse", "ood_mse")


def summarize(rows: list, spec: BenchSpec) -> dict:
    """Per-group mean/std per method and challenger-vs-reference win counts.

    Groups are (arch, test_fraction, train_fraction); a "win" is a seed
    where the challenger's metric is strictly lower.
    """
    by_key = {(r["method"], r["arch"], r["test_fraction"], r["train_fraction"], r["seed"]): r for r in rows}
    groups = sorted({(r["arch"], r["test_fraction"], r["train_fraction"]) for r in rows},
                    key=lambda g: (str(g[0]), g[1], -g[2]))
    table, wins = [], {m: [0, 0] for m in METRICS}
    for g in groups:
        for method in spec.methods:
            entry = {"method": method, "arch": g[0], "test_fraction": g[1], "train_fraction": g[2]}
            for metric in METRICS:
                vals = [by_key[(method, *g, s)].get(metric) for s in spec.seeds if (method, *g, s) in by_key]
                vals = [v for v in vals if v is not None]
                if vals:
                    entry[f"{metric}_mean"] = float(np.mean(vals))
                    entry[f"{metric}_std"] = float(np.std(vals))
            table.append(entry)
        for metric in METRICS:
            w = n = 0
            for s in spec.seeds:
                ref = by_key.get((spec.reference, *g, s), {}).get(metric)
                ch = by_key.get((spec.challenger, *g, s), {}).get(metric)
                if ref is None or ch is None:
                    continue
                n += 1
                w += ch < ref
            wins[metric][0] += w
            wins[metric][1] += n
    return {"table": table, "wins": {m: {"wins": w, "cells": n} for m, (w, n) in wins.items() if n}}


def results_csv(summary: dict) -> str:
    cols = ["method", "arch", "test_fraction", "train_fraction"]
    for metric in METRICS:
        cols += [f"{metric}_mean", f"{metric}_std"]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for entry in summary["table"]:
        w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in entry.items()})
    for metric, d in summary["wins"].items():
        buf.write(f"# {metric}: challenger wins {d['wins']} of {d['cells']}\n")
    return buf.getvalue()


def records_jsonl(rows: list, digest: str) -> str:
    return "".join(json.dumps({"schema": 1, "kind": "bench_cell", "config_hash": digest,
                               "version": __version__, **r}, sort_keys=True) + "\n" for r in rows)
