"""Command-line front end.

Subcommands cover dataset generation, PCA fitting and eigen reports,
regression fits, LSM policy runs and continuation studies, and timing
benchmarks. Output is CSV/JSON only; plotting is left to external tools.
Every run writes a ``manifest.json`` echoing the fully resolved
configuration and the code version, so a run is reproducible from its
manifest alone.

Exit codes: 0 success, 2 config error, 3 numerical failure.
"""

import argparse
import os
import sys
import time

import numpy as np

from . import __version__, configio, datagen, dimred, lsm, regression
from . import instruments as ins
from .errors import BudgetError, ConfigError, NumericalError

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
THREADS_ENV = "DIFFPCA_THREADS"


def _set_threads(requested):
    """Worker threads for the jitted kernels; never changes results."""
    n = requested if requested is not None else os.environ.get(THREADS_ENV)
    if n is None:
        return None
    n = int(n)
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    try:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except ImportError:
        pass
    return n


def _write_manifest(args, resolved, outputs):
    resolved = dict(resolved)
    resolved["threads"] = args.threads
    configio.save_json(os.path.join(args.out, "manifest.json"), {
        "command": args.command,
        "version": __version__,
        "config": resolved,
        "outputs": sorted(outputs),
    })


def _load_table(path):
    if os.path.isdir(path):
        path = os.path.join(path, "dataset.csv")
    sidecar = configio.load_json(f"{path}.json")
    kind = sidecar.get("type")
    if kind == "dataset":
        return datagen.Dataset.load_csv(path)
    if kind == "risk_reports":
        return datagen.RiskReportSet.load_csv(path)
    raise ConfigError(f"{path}.json: unknown table type {kind!r}")


def _truncation(args):
    """Resolve --dim/--tol/--rel-tol; default keeps 99% of the mass."""
    given = {k: v for k, v in
             (("dim", args.dim), ("tol", args.tol), ("rel_tol", args.rel_tol))
             if v is not None}
    if len(given) > 1:
        raise ConfigError("give at most one of --dim, --tol, --rel-tol")
    return given or {"rel_tol": 0.01}


def cmd_generate(args):
    model = configio.load_model(args.model)
    instrument = configio.load_instrument(args.instrument)
    ds = datagen.generate(model, instrument, args.horizon, args.m, args.seed,
                          smooth=not args.hard)
    os.makedirs(args.out, exist_ok=True)
    ds.save_csv(os.path.join(args.out, "dataset.csv"))
    _write_manifest(args, {
        "model": model.to_dict(),
        "instrument": ins.instrument_to_dict(instrument),
        "horizon": args.horizon, "m": args.m, "seed": args.seed,
        "smooth": not args.hard,
    }, ["dataset.csv", "dataset.csv.json"])
    print(f"wrote {args.m} rows to {os.path.join(args.out, 'dataset.csv')}")
    return 0


def _write_eigen_report(path, enc):
    """Rows are state coordinates, columns kept axes scaled by root mass."""
    loadings = enc.scaled_loadings()
    with open(path, "w", encoding="utf-8") as fh:
        cols = "".join(f",pc_{j}" for j in range(enc.p))
        fh.write(f"coordinate{cols}\n")
        for i in range(enc.n):
            vals = "".join(",%.17g" % v for v in loadings[i])
            fh.write(f"x_{i}{vals}\n")


def cmd_pca(args):
    data = _load_table(args.data)
    trunc = _truncation(args)
    enc = dimred.fit(args.mode, data, central=args.central, **trunc)
    os.makedirs(args.out, exist_ok=True)
    enc.save(os.path.join(args.out, "encoder.json"))
    _write_eigen_report(os.path.join(args.out, "eigen_report.csv"), enc)
    _write_manifest(args, {
        "data": os.path.abspath(args.data), "data_metadata": data.metadata,
        "mode": args.mode, "central": args.central, "truncation": trunc,
    }, ["encoder.json", "eigen_report.csv"])
    print(f"kept p={enc.p} of n={enc.n} axes "
          f"(truncated mass {enc.eps_actual:.3e} of {enc.total_mass:.3e})")
    return 0


def cmd_regress(args):
    data = _load_table(args.data)
    if not hasattr(data, "Y"):
        raise ConfigError("regression needs a dataset table (x/y/z columns)")
    basis = regression.BasisSpec(dim=data.n, degree=args.degree)
    if args.differential:
        lams = "auto" if args.lam is None else [args.lam] * data.n
        model = regression.fit_differential(data.X, data.Y, data.Z, basis,
                                            lams=lams)
    else:
        model = regression.fit_value(data.X, data.Y, basis,
                                     lam=args.lam or 0.0)
    resid = model.predict(data.X) - data.Y
    os.makedirs(args.out, exist_ok=True)
    model.save(os.path.join(args.out, "model.json"))
    configio.save_json(os.path.join(args.out, "report.json"), {
        "rmse": float(np.sqrt(np.mean(resid * resid))),
        "k": basis.k, "degree": args.degree, "dim": data.n,
        "differential": args.differential,
        "coefficients": model.coefficients().tolist(),
        "condition": model.condition,
        "flags": list(model.flags),
    })
    _write_manifest(args, {
        "data": os.path.abspath(args.data), "data_metadata": data.metadata,
        "degree": args.degree, "differential": args.differential,
        "lam": args.lam,
    }, ["model.json", "report.json"])
    print(f"fit k={basis.k} coefficients, "
          f"train rmse {float(np.sqrt(np.mean(resid * resid))):.6g}")
    return 0


def _scatter_csv(path, report):
    scatter = report["scatter"]
    methods = list(lsm.STUDY_METHODS)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("truth,stderr_truth" +
                 "".join(f",pred_{m}" for m in methods) + "\n")
        rows = zip(scatter["truth"], scatter["stderr_truth"],
                   *[scatter["pred"][m] for m in methods])
        for row in rows:
            fh.write(",".join("%.17g" % v for v in row) + "\n")


def cmd_lsm(args):
    model = configio.load_model(args.model)
    instrument = configio.load_instrument(args.instrument)
    trunc = _truncation(args)
    lams = "auto" if args.lam is None else args.lam
    os.makedirs(args.out, exist_ok=True)
    common = {
        "model": model.to_dict(),
        "instrument": ins.instrument_to_dict(instrument),
        "m": args.m, "seed": args.seed, "degree": args.degree,
        "mode": args.mode, "central": args.central, "truncation": trunc,
        "lam": args.lam,
    }

    if args.study is not None:
        report = lsm.continuation_study(
            model, instrument, args.study, m_train=args.m,
            m_test=args.test_m, seed=args.seed, m_inner=args.inner,
            degree=args.degree, central=args.central, lams=lams, **trunc)
        scatter = report.pop("scatter")
        configio.save_json(os.path.join(args.out, "study.json"), report)
        _scatter_csv(os.path.join(args.out, "study_scatter.csv"),
                     {"scatter": scatter})
        _write_manifest(args, {**common, "study": args.study,
                               "test_m": args.test_m, "inner": args.inner},
                        ["study.json", "study_scatter.csv"])
        rmse = ", ".join(f"{k}={v:.5g}" for k, v in report["rmse"].items())
        print(f"continuation study at t={args.study}: p={report['p']}, {rmse}")
        return 0

    policy = lsm.fit_policy(model, instrument, args.m, args.seed,
                            degree=args.degree, mode=args.mode,
                            central=args.central, lams=lams, **trunc)
    price, stderr = lsm.price_lower_bound(model, instrument, policy,
                                          args.price_m, args.seed)
    stages = [{"date": s.date,
               "p": None if s.encoder is None else s.encoder.p,
               "flags": list(s.flags)} for s in policy.stages]
    configio.save_json(os.path.join(args.out, "price.json"), {
        "price": price, "stderr": stderr, "m_price": args.price_m,
        "stages": stages, "policy_metadata": policy.metadata,
    })
    _write_manifest(args, {**common, "price_m": args.price_m},
                    ["price.json"])
    print(f"lower bound {price:.6f} +- {stderr:.6f} ({args.price_m} paths)")
    return 0


def cmd_bench(args):
    m, n = args.bench_m, args.bench_n
    os.makedirs(args.out, exist_ok=True)
    report = {"covariance": None, "eigen": None, "skipped": None}
    try:
        # warm up the jitted eigen kernel so compile time is not measured
        dimred.eigen_sym(np.eye(8))
        rows = np.random.default_rng(args.seed).standard_normal((m, n))
        t0 = time.perf_counter()
        cov = dimred.covariance(rows)
        t1 = time.perf_counter()
        dimred.eigen_sym(cov)
        t2 = time.perf_counter()
        report["covariance"] = {"m": m, "n": n, "seconds": t1 - t0}
        report["eigen"] = {"n": n, "seconds": t2 - t1}
    except MemoryError as exc:
        report["skipped"] = f"insufficient memory for m={m}, n={n}: {exc}"
    configio.save_json(os.path.join(args.out, "bench.json"), report)
    _write_manifest(args, {"bench_m": m, "bench_n": n, "seed": args.seed},
                    ["bench.json"])
    if report["skipped"]:
        print(report["skipped"])
    else:
        print(f"covariance m={m} n={n}: {report['covariance']['seconds']:.4f}s, "
              f"eigen n={n}: {report['eigen']['seconds']:.4f}s")
    return 0


def _add_truncation_flags(sub):
    sub.add_argument("--dim", type=int, default=None,
                     help="keep exactly this many axes")
    sub.add_argument("--tol", type=float, default=None,
                     help="absolute truncated-mass budget")
    sub.add_argument("--rel-tol", type=float, default=None,
                     help="truncated mass as a fraction of the total "
                          "(default 0.01 when nothing else is given)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="diffpca",
        description="Monte-Carlo datasets, differential PCA, and LSM studies")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default ${THREADS_ENV})")

    p = sub.add_parser("generate", parents=[common],
                       help="simulate a training dataset and write it as CSV")
    p.add_argument("--model", required=True, help="model config JSON")
    p.add_argument("--instrument", required=True, help="instrument config JSON")
    p.add_argument("--horizon", type=float, required=True,
                   help="exposure date at which states are observed")
    p.add_argument("--m", type=int, required=True, help="number of paths")
    p.add_argument("--hard", action="store_true",
                   help="disable payoff smoothing")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("pca", parents=[common],
                       help="fit an encoder and write the eigen report")
    p.add_argument("--data", required=True, help="dataset CSV, or a generate output directory")
    p.add_argument("--mode", choices=dimred.MODES, default="differential")
    p.add_argument("--central", action="store_true")
    _add_truncation_flags(p)
    p.set_defaults(func=cmd_pca)

    p = sub.add_parser("regress", parents=[common],
                       help="fit a polynomial regression on a dataset")
    p.add_argument("--data", required=True, help="dataset CSV, or a generate output directory")
    p.add_argument("--degree", type=int, default=3)
    p.add_argument("--differential", action="store_true",
                   help="penalize derivative errors as well")
    p.add_argument("--lam", type=float, default=None,
                   help="regularization override")
    p.set_defaults(func=cmd_regress)

    p = sub.add_parser("lsm", parents=[common],
                       help="fit an exercise policy and price, or run a "
                            "continuation study at one call date")
    p.add_argument("--model", required=True)
    p.add_argument("--instrument", required=True)
    p.add_argument("--m", type=int, default=8192, help="training paths")
    p.add_argument("--degree", type=int, default=3)
    p.add_argument("--mode", choices=("classic", "differential"),
                   default="differential",
                   help="feature extraction for continuation regressions")
    p.add_argument("--central", action="store_true")
    _add_truncation_flags(p)
    p.add_argument("--lam", type=float, default=None)
    p.add_argument("--price-m", type=int, default=1 << 15,
                   help="paths for the lower-bound price")
    p.add_argument("--study", type=float, default=None,
                   help="run a continuation study at this call date instead "
                        "of pricing")
    p.add_argument("--test-m", type=int, default=128,
                   help="out-of-sample states for the study")
    p.add_argument("--inner", type=int, default=1 << 12,
                   help="inner paths per state for the study oracle")
    p.set_defaults(func=cmd_lsm)

    p = sub.add_parser("bench", parents=[common],
                       help="time the covariance and eigen kernels")
    p.add_argument("--bench-m", type=int, default=32768)
    p.add_argument("--bench-n", type=int, default=1024)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _set_threads(args.threads)
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, BudgetError, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
