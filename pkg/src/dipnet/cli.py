"""Command-line entry point: ``dipnet <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 numeric divergence,
4 theorem-check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import config as cfgmod
from ._version import __version__
from .data import DataError, Table, synth_regression, write_csv
from .experiment import BenchSpec, attacked_inputs, records_jsonl, results_csv, run_bench, summarize
from .network import DipNet, load_checkpoint, predict_averaged
from .objective import ConfigError
from .smoothness import GaussianNoise, PointMass, UniformNoise, smoothness_report, verify_theorem_1, \
    verify_theorem_2
from .training import DivergenceError, evaluate, train

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_THEOREM = 0, 2, 3, 4
OUTPUT_ENV = "DIPNET_OUTPUT_DIR"

log = logging.getLogger("dipnet")


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(OUTPUT_ENV) or "runs"
    return Path(out)


def _record(kind: str, digest: str, seed, **fields) -> dict:
    return {"schema": 1, "kind": kind, "config_hash": digest, "seed": seed, "version": __version__, **fields}


def _emit(record: dict, path=None) -> None:
    line = json.dumps(record, sort_keys=True)
    print(line)
    if path is not None:
        with open(path, "a") as fh:
            fh.write(line + "\n")


def _raw_config(args) -> dict:
    overrides = [cfgmod.parse_assignment(s) for s in args.set or ()]
    if getattr(args, "seed", None) is not None:
        overrides.append({"seed": args.seed})
    if getattr(args, "method", None) is not None:
        overrides.append({"method": args.method})
    attack = {}
    for flag, key in (("attack", "kind"), ("attack_sigma", "sigma"), ("attack_eps", "epsilon"),
                      ("attack_phase", "phase")):
        if getattr(args, flag, None) is not None:
            attack[key] = getattr(args, flag)
    if attack:
        overrides.append({"attack": attack})
    return cfgmod.load(args.config, tuple(overrides))


def _add_config_args(p, attack: bool = True) -> None:
    p.add_argument("--config", help="YAML run config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value, e.g. hp.lr=0.01")
    p.add_argument("--seed", type=int)
    p.add_argument("--method", help="standard | dipnet | rs | fixed(<variance>)")
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./runs)")
    p.add_argument("--print-effective-config", action="store_true")
    if attack:
        p.add_argument("--attack", choices=["none", "gaussian", "fgsm"])
        p.add_argument("--attack-sigma", type=float)
        p.add_argument("--attack-eps", type=float)
        p.add_argument("--attack-phase", choices=["train", "eval"])


def _resolve(args):
    raw = _raw_config(args)
    cfg, data = cfgmod.resolve(raw)
    if args.print_effective_config:
        sys.stdout.write(cfg.dump())
    return cfg, data


def _fresh(path: Path) -> Path:
    if path.exists():
        path.unlink()
    return path


def cmd_train(args) -> int:
    cfg, data = _resolve(args)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(cfg.dump())
    model = DipNet.from_config(cfg.model, cfg.seed)
    state = train(model, data, cfg.hp, cfg.seed,
                  attack=cfg.attack if cfg.attack.applies_to_training else None,
                  metrics_path=_fresh(out / "metrics.jsonl"),
                  checkpoint_path=out / "checkpoint.json",
                  checkpoint_every=args.checkpoint_every,
                  config_digest=cfg.digest,
                  timings_path=_fresh(out / "timings.jsonl"))
    last = state.history[-1] if state.history else {}
    print(json.dumps(_record("train_done", cfg.digest, cfg.seed, epochs=state.epoch,
                             final=last.get("loss", {}), checkpoint=str(out / "checkpoint.json")),
                     sort_keys=True))
    return EXIT_OK


def _split(data, name: str):
    parts = {"train": data.train, "val": data.val, "test": data.test_id, "test_id": data.test_id,
             "test_ood": data.test_ood, "ood": data.test_ood}
    if name not in parts:
        raise ConfigError(f"unknown split {name!r}")
    return parts[name]


def _load_model(args, data):
    model, digest = load_checkpoint(args.checkpoint)
    if model.input_dim != data.train.X.shape[1]:
        raise ConfigError(f"checkpoint expects {model.input_dim} features, data has {data.train.X.shape[1]}")
    return model, digest


def cmd_eval(args) -> int:
    cfg, data = _resolve(args)
    model, digest = _load_model(args, data)
    part = _split(data, args.split)
    if len(part) == 0:
        raise ConfigError(f"split {args.split!r} is empty")
    k = args.k or cfg.hp.k
    rng = np.random.default_rng([cfg.seed, 0xE7A1])
    X = part.X
    if cfg.attack.applies_to_eval:
        X = attacked_inputs(model, X, part.y, cfg.attack, rng)
    metrics = evaluate(model, X, part.y, k, rng, data.y_std)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    rec = _record("eval", digest or cfg.digest, cfg.seed, split=args.split, k=k, attack=cfg.attack.kind,
                  n=len(part), **metrics)
    _emit(rec, _fresh(out / "eval.jsonl"))
    if args.dump_predictions:
        pred = predict_averaged(model, X, k, np.random.default_rng([cfg.seed, 0xD0]))
        values = data.denormalize_y(pred.value.reshape(-1)) if model.task == "regression" else pred.classes
        with open(args.dump_predictions, "w") as fh:
            fh.write("row,prediction,target\n")
            targets = data.denormalize_y(part.y) if model.task == "regression" else part.y
            for r, p, t in zip(part.rows, values, targets):
                fh.write(f"{int(r)},{float(p)!r},{float(t)!r}\n")
    return EXIT_OK


def cmd_attack(args) -> int:
    cfg, data = _resolve(args)
    if not cfg.attack.active:
        raise ConfigError("attack: choose --attack gaussian or fgsm")
    model, _ = _load_model(args, data)
    part = _split(data, args.split)
    rng = np.random.default_rng([cfg.seed, 0xA77])
    X_adv = attacked_inputs(model, part.X, part.y, cfg.attack, rng)
    X_orig = X_adv * data.x_std + data.x_mean
    cols = [c for c in data.columns if c not in data.dropped_columns]
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    path = Path(args.output) if args.output else out / "attacked.csv"
    write_csv(Table(cols, X_orig, data.denormalize_y(part.y)), path, cfg.raw["data"]["schema"]["target"])
    linf = float(np.abs(X_adv - part.X).max()) if len(part) else 0.0
    _emit(_record("attack", cfg.digest, cfg.seed, attack=cfg.attack.kind, split=args.split, n=len(part),
                  max_abs_perturbation=linf, output=str(path)), _fresh(out / "attack.jsonl"))
    return EXIT_OK


def _noise(args):
    if args.noise == "none":
        return PointMass()
    if args.noise == "gaussian":
        return GaussianNoise(args.noise_scale)
    return UniformNoise(args.noise_scale)


def cmd_probe(args) -> int:
    cfg, data = _resolve(args)
    model, digest = _load_model(args, data)
    part = _split(data, args.split)
    rng = np.random.default_rng([cfg.seed, 0x9B0])
    n = min(args.probes, len(part))
    probes = part.X[rng.choice(len(part), size=n, replace=False)]
    report = smoothness_report(model, probes, _noise(args), args.n_mc, rng, args.hessian_iters)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    _emit(_record("probe", digest or cfg.digest, cfg.seed, **report.as_dict()), _fresh(out / "probe.jsonl"))
    return EXIT_OK


def cmd_verify(args) -> int:
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    path = _fresh(out / "theorems.jsonl")
    checks = [verify_theorem_1(args.c, args.epsilon, args.C, args.scale, args.zeta),
              verify_theorem_2(args.c, args.epsilon, args.C, args.scale, args.zeta)]
    for chk in checks:
        _emit(_record("theorem_check", "", None, **chk.as_dict()), path)
    return EXIT_OK if all(c.passed for c in checks) else EXIT_THEOREM


def cmd_bench(args) -> int:
    doc = {}
    if args.matrix:
        doc = cfgmod.load_yaml(Path(args.matrix).read_text()) or {}
    for ov in args.set or ():
        doc = cfgmod.deep_merge(doc, cfgmod.parse_assignment(ov))
    spec = BenchSpec.from_dict(doc)
    if args.print_effective_config:
        sys.stdout.write(yaml.safe_dump(spec.__dict__, sort_keys=True))
    digest = cfgmod.config_hash(spec.__dict__)
    rows = run_bench(spec, jobs=args.jobs)
    summary = summarize(rows, spec)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench_cells.jsonl").write_text(records_jsonl(rows, digest))
    (out / "bench_results.csv").write_text(results_csv(summary))
    print(json.dumps(_record("bench_summary", digest, None, wins=summary["wins"],
                             failed=sum("error" in r for r in rows)), sort_keys=True))
    return EXIT_OK


def cmd_synth(args) -> int:
    table = synth_regression(args.n, args.d, args.noise_sigma, args.seed, args.ood_shift, args.ood_fraction)
    path = Path(args.output)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_csv(table, path, args.target)
    print(json.dumps(_record("synth", "", args.seed, rows=len(table.y), columns=table.columns + [args.target],
                             output=str(path)), sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dipnet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"dipnet {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a run config")
    _add_config_args(p)
    p.add_argument("--checkpoint-every", type=int, default=0, metavar="N")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test_id")
    p.add_argument("-k", type=int, help="prediction samples (default hp.k)")
    p.add_argument("--dump-predictions", metavar="CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attack", help="write attacked copies of a data split")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test_id")
    p.add_argument("--output", metavar="CSV")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("probe", help="Lipschitz / smoothness probe of a checkpoint")
    _add_config_args(p, attack=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test_id")
    p.add_argument("--probes", type=int, default=64)
    p.add_argument("--noise", choices=["none", "gaussian", "uniform"], default="gaussian")
    p.add_argument("--noise-scale", type=float, default=0.1)
    p.add_argument("--n-mc", type=int, default=256)
    p.add_argument("--hessian-iters", type=int, default=50)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("verify-theorems", help="quadrature check of the smoothing bounds")
    p.add_argument("--c", type=float, default=0.5)
    p.add_argument("--epsilon", type=float, default=0.2)
    p.add_argument("--C", type=float, default=0.1)
    p.add_argument("--scale", type=float, default=1.0, help="b (first derivative) and s (second derivative)")
    p.add_argument("--zeta", type=float, help="window multiplier (default ceil(1/epsilon) + 1)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="method comparison grid")
    p.add_argument("--matrix", help="YAML bench matrix")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.add_argument("--print-effective-config", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="write the synthetic regression dataset")
    p.add_argument("--n", type=int, default=8000)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--noise-sigma", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=1234)
    p.add_argument("--ood-shift", type=float, default=0.0)
    p.add_argument("--ood-fraction", type=float, default=0.0)
    p.add_argument("--target", default="y")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
