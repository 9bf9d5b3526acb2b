"""Command-line entry point: ``nwsketch <subcommand> ...``.

Every subcommand writes a JSON manifest with the fully resolved arguments
next to its outputs. Passing that manifest back through ``--config``
reproduces the run; explicit flags still take precedence over it.
"""
import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from nwsketch import __version__
from nwsketch._backend import BACKEND
from nwsketch.datasets import (
    Standardizer,
    fit_linear_regression,
    from_spec,
    load_csv,
    load_matrix,
    mse,
    synth_regression,
)
from nwsketch.lsh import LshFamilySpec
from nwsketch.nws import NwExactOracle, NwSketch, error_bound
from nwsketch.race import SnapshotError
from nwsketch.trainer import TrainConfig, TrainRun, compare_runs, run_adaptive, run_baseline

REGRESS_COLUMNS = ("model", "R", "test_mse")
ERROR_COLUMNS = ("R", "p50", "p99", "bound")


class CliError(Exception):
    pass


def _int_list(text):
    try:
        values = [int(v) for v in str(text).replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("row counts must be positive integers")
    return values


def _derive_seed(root, *key):
    return int(np.random.SeedSequence(root, spawn_key=key).generate_state(1, np.uint64)[0])


def _write_manifest(path, command, args, **extra):
    payload = {
        "command": command,
        "version": __version__,
        "kernel_backend": BACKEND,
        "args": {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command", "seed_given")},
    }
    payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=False, default=str)
        fh.write("\n")


def _write_rows(path, columns, rows):
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join("" if v is None else (repr(v) if isinstance(v, float) else str(v)) for v in row))
    text = "\n".join(lines) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise CliError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _load_dataset(args):
    _require(args, "data")
    if str(args.data).startswith("synth:"):
        return from_spec(args.data, seed=_derive_seed(args.seed, 0))
    return load_csv(args.data, args.target_col, not args.no_header, drop_columns=args.drop_cols)


# -- subcommands -----------------------------------------------------------


def cmd_sketch_build(args):
    _require(args, "data", "output")
    ds = load_csv(args.data, args.target_col, not args.no_header, drop_columns=args.drop_cols)
    X, y = ds.features, ds.targets
    scaler = None
    if args.standardize:
        scaler = Standardizer.fit(X)
        X = scaler.transform(X)
    y_bound = args.y_bound if args.y_bound is not None else max(float(np.abs(y).max()), 1e-12)
    spec = LshFamilySpec(bits=args.bits, dim=X.shape[1], seed=_derive_seed(args.seed, 1))
    sketch = NwSketch(spec, args.rows, y_bound, estimator=args.estimator, groups=args.groups)
    sketch.insert_many(X, y)
    sketch.save(args.output)
    _write_manifest(
        f"{args.output}.manifest.json",
        "sketch-build",
        args,
        standardizer=scaler.to_dict() if scaler else None,
        dim=int(X.shape[1]),
        y_bound=y_bound,
    )
    print(f"wrote {args.output}: {sketch}")


def cmd_sketch_query(args):
    _require(args, "snapshot", "queries")
    sketch = NwSketch.load(args.snapshot)
    drop = [args.target_col] if args.target_col is not None else []
    Q = load_matrix(args.queries, not args.no_header, drop_columns=drop)
    if Q.shape[1] != sketch.spec.dim:
        raise CliError(f"query rows have {Q.shape[1]} features but the snapshot was built for {sketch.spec.dim}")
    side = Path(f"{args.snapshot}.manifest.json")
    if side.exists():
        meta = json.loads(side.read_text())
        if meta.get("standardizer"):
            Q = Standardizer.from_dict(meta["standardizer"]).transform(Q)
    est = sketch.query_many(Q)
    _write_rows(args.output, ("estimate",), [(float(v),) for v in est])
    if args.output is not None:
        _write_manifest(f"{args.output}.manifest.json", "sketch-query", args)


def cmd_regress_bench(args):
    ds = _load_dataset(args).with_split(args.test_ratio, seed=_derive_seed(args.seed, 2))
    Xtr, ytr = ds.train()
    Xte, yte = ds.test()
    if args.standardize:
        scaler = Standardizer.fit(Xtr)
        Xtr, Xte = scaler.transform(Xtr), scaler.transform(Xte)
    y_bound = max(float(np.abs(ytr).max()), 1e-12)
    rows = []
    for R in args.rows:
        spec = LshFamilySpec(bits=args.bits, dim=Xtr.shape[1], seed=_derive_seed(args.seed, 3, R))
        sketch = NwSketch(spec, R, y_bound, estimator=args.estimator)
        sketch.insert_many(Xtr, ytr)
        rows.append(("nws", R, mse(sketch.query_many, Xte, yte)))
    rows.append(("ols", None, mse(fit_linear_regression(Xtr, ytr), Xte, yte)))
    _write_rows(args.output, REGRESS_COLUMNS, rows)
    if args.output is not None:
        _write_manifest(f"{args.output}.manifest.json", "regress-bench", args)
        for model, R, err in rows:
            print(f"{model:>4} {'' if R is None else R:>6} {err:.6g}")
    return rows


def error_study(bits, rows, delta, n_train, n_test, seeds, dim=8, noise=0.1, estimator="mom", seed=0):
    """Per-R error quantiles of the sketch against the exact estimator.

    Targets are clipped to ``[-1, 1]`` so the response bound is ``B = 1``.
    Quantiles are computed per sketch seed and then averaged over seeds.
    """
    ds = synth_regression("smooth-angular", n_train + n_test, dim, noise=noise, seed=_derive_seed(seed, 4))
    B = 1.0
    X, y = ds.features, np.clip(ds.targets, -B, B)
    Xtr, ytr, Xte = X[:n_train], y[:n_train], X[n_train:]
    exact = NwExactOracle(bits, Xtr, ytr).predict_many(Xte)
    out = []
    for R in rows:
        p50, p99 = [], []
        for s in range(seeds):
            spec = LshFamilySpec(bits=bits, dim=dim, seed=_derive_seed(seed, 5, s))
            sketch = NwSketch(spec, R, B, estimator=estimator)
            sketch.insert_many(Xtr, ytr)
            err = np.abs(sketch.query_many(Xte) - exact)
            p50.append(np.quantile(err, 0.5))
            p99.append(np.quantile(err, 0.99))
        out.append((R, float(np.mean(p50)), float(np.mean(p99)), error_bound(B, delta, R)))
    return out


def cmd_error_study(args):
    rows = error_study(
        args.bits,
        args.rows,
        args.delta,
        args.n_train,
        args.n_test,
        args.seeds,
        dim=args.dim,
        noise=args.noise,
        estimator=args.estimator,
        seed=args.seed,
    )
    _write_rows(args.output, ERROR_COLUMNS, rows)
    if args.output is not None:
        _write_manifest(f"{args.output}.manifest.json", "error-study", args)
    return rows


def _load_train_config(path):
    """Read a training config file or a train-demo manifest."""
    if path is None:
        return TrainConfig()
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    return TrainConfig.from_dict(data.get("train_config", data))


def _train_config(args):
    cfg = _load_train_config(args.config)
    if args.seed_given:
        cfg.seed = args.seed
    if args.iterations is not None:
        cfg.iterations = args.iterations
    return cfg.validate()


def cmd_train_demo(args):
    cfg = _train_config(args)
    out = Path(args.output or "train-demo")
    out.mkdir(parents=True, exist_ok=True)
    baseline = run_baseline(cfg)
    adaptive = run_adaptive(cfg)
    baseline.to_csv(out / "baseline.csv")
    adaptive.to_csv(out / "adaptive.csv")
    report = compare_runs(baseline, adaptive)
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    cfg.dump(out / "config.yaml")
    _write_manifest(out / "manifest.json", "train-demo", args, train_config=cfg.to_dict())
    print(json.dumps(report, indent=2))
    return report


def cmd_compare(args):
    cfg = _load_train_config(args.config)
    if args.warmup is not None:
        cfg.sampler.warmup_iters = args.warmup
    baseline = TrainRun.from_csv(args.baseline, config=cfg, mode="baseline")
    adaptive = TrainRun.from_csv(args.adaptive, config=cfg, mode="adaptive")
    report = compare_runs(baseline, adaptive)
    text = json.dumps(report, indent=2) + "\n"
    if args.output:
        Path(args.output).write_text(text)
        _write_manifest(f"{args.output}.manifest.json", "compare", args)
    sys.stdout.write(text)
    return report


# -- parser ----------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root seed for all randomness")
    common.add_argument("--output", "-o", default=None, help="output path")
    common.add_argument("--config", default=None, help="YAML/JSON config or a previous run's manifest")

    parser = argparse.ArgumentParser(prog="nwsketch", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND} kernels)")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_flags(p):
        p.add_argument("--data", help="CSV path or synth:<kind>[:n=..,d=..,noise=..]")
        p.add_argument("--target-col", default="-1", help="target column index or header name")
        p.add_argument("--no-header", action="store_true", help="CSV has no header row")
        p.add_argument("--drop-cols", type=lambda s: [c for c in s.split(",") if c], default=[])

    p = sub.add_parser("sketch-build", parents=[common], help="build a sketch snapshot from CSV")
    data_flags(p)
    p.add_argument("--bits", type=int, default=10)
    p.add_argument("-R", "--rows", type=int, default=200)
    p.add_argument("--y-bound", type=float, default=None, help="clip bound B (default max |y|)")
    p.add_argument("--estimator", choices=("mean", "mom"), default="mean")
    p.add_argument("--groups", type=int, default=None)
    p.add_argument("--standardize", action="store_true")
    p.set_defaults(func=cmd_sketch_build)

    p = sub.add_parser("sketch-query", parents=[common], help="query a snapshot with CSV rows")
    p.add_argument("--snapshot")
    p.add_argument("--queries")
    p.add_argument("--target-col", default=None, help="column to drop from the query file")
    p.add_argument("--no-header", action="store_true")
    p.set_defaults(func=cmd_sketch_query)

    p = sub.add_parser("regress-bench", parents=[common], help="sketch vs OLS test MSE")
    data_flags(p)
    p.add_argument("--bits", type=int, default=10)
    p.add_argument("-R", "--rows", type=_int_list, default=[10, 20, 50, 100, 200])
    p.add_argument("--test-ratio", type=float, default=0.1)
    p.add_argument("--estimator", choices=("mean", "mom"), default="mean")
    p.add_argument("--no-standardize", dest="standardize", action="store_false")
    p.set_defaults(func=cmd_regress_bench)

    p = sub.add_parser("error-study", parents=[common], help="sketch error vs exact estimator and bound")
    p.add_argument("--bits", type=int, default=10)
    p.add_argument("-R", "--rows", type=_int_list, default=[10, 20, 50, 100, 200, 800])
    p.add_argument("--delta", type=float, default=0.01)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--estimator", choices=("mean", "mom"), default="mom")
    p.set_defaults(func=cmd_error_study)

    p = sub.add_parser("train-demo", parents=[common], help="baseline vs adaptive training run")
    p.add_argument("--iterations", type=int, default=None)
    p.set_defaults(func=cmd_train_demo)

    p = sub.add_parser("compare", parents=[common], help="compare two metric CSVs")
    p.add_argument("--baseline", required=True)
    p.add_argument("--adaptive", required=True)
    p.add_argument("--warmup", type=int, default=None, help="warm-up iterations (default from --config)")
    p.set_defaults(func=cmd_compare)

    return parser, sub


# subcommands whose --config is a run config rather than a flag-defaults file
_OWN_CONFIG = {"train-demo", "compare"}


def parse_args(argv=None):
    parser, sub = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    args.seed_given = any(a == "--seed" or a.startswith("--seed=") for a in argv)
    if args.config and args.command not in _OWN_CONFIG:
        with open(args.config) as fh:
            data = yaml.safe_load(fh) or {}
        data = data.get("args", data)
        subparser = sub.choices[args.command]
        known = {a.dest for a in subparser._actions}
        defaults = {k: v for k, v in data.items() if k in known and k not in ("config", "help")}
        subparser.set_defaults(**defaults)
        args = parser.parse_args(argv)
        args.seed_given = True
    return args


def main(argv=None):
    try:
        args = parse_args(argv)
    except FileNotFoundError as exc:
        print(f"nwsketch: error: {exc}", file=sys.stderr)
        return 1
    try:
        args.func(args)
    except (CliError, SnapshotError, ValueError, OSError) as exc:
        print(f"nwsketch: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
