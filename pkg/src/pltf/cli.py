"""Command-line interface: fit, predict, cross-validate, degrees of freedom,
and the simulation benchmark.

Files are UTF-8: tabular data as CSV with a header row (columns ``y``, ``z``,
then ``x1`` ... ``xp`` in order), model state as schema-versioned JSON.  Exit
codes: 0 success, 2 input error, 3 non-convergence, 4 internal error.
"""

import argparse
import csv
import json
import sys

import numpy as np

from .basis import FallingFactorialBasis, GFunction
from .errors import PltfError
from .model import (
    BcdControls,
    NaturalCubicG,
    PltfFit,
    SortedDesign,
    df_monte_carlo,
    df_unbiased,
    predict,
)
from .selection import cross_validate, default_grid, fit_method
from .simulate import SimScenario, results_to_csv, results_to_json, run_experiment
from .solvers import SolverControls
from .utils import resolve_threads

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NONCONVERGED = 3
EXIT_INTERNAL = 4


class InputError(Exception):
    pass


def load_dataset(path):
    """Read a dataset CSV into (y, x, z) arrays in file row order."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise InputError(f"{path}: empty file") from None
            rows = list(reader)
    except OSError as exc:
        raise InputError(f"{path}: {exc}") from exc
    header = [h.strip() for h in header]
    if "y" not in header or "z" not in header:
        raise InputError(f"{path}: header must contain 'y' and 'z' columns")
    x_names = [h for h in header if h not in ("y", "z")]
    expected = [f"x{i + 1}" for i in range(len(x_names))]
    if x_names != expected:
        raise InputError(
            f"{path}: covariate columns must be x1..x{len(x_names)} in order, got {x_names}"
        )
    y_pos, z_pos = header.index("y"), header.index("z")
    x_pos = [header.index(name) for name in x_names]
    n, p = len(rows), len(x_names)
    if n == 0:
        raise InputError(f"{path}: no data rows")
    y = np.empty(n)
    z = np.empty(n)
    x = np.empty((n, p))
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise InputError(f"{path}: row {i + 2} has {len(row)} cells, expected {len(header)}")
        try:
            y[i] = float(row[y_pos])
            z[i] = float(row[z_pos])
            for j, pos in enumerate(x_pos):
                x[i, j] = float(row[pos])
        except ValueError as exc:
            raise InputError(f"{path}: row {i + 2}: {exc}") from exc
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z)) and np.all(np.isfinite(x))):
        raise InputError(f"{path}: all cells must be finite numbers")
    return y, x, z


def fit_to_json(fit: PltfFit, seed=None):
    out = {
        "schema_version": SCHEMA_VERSION,
        "k": fit.k,
        "lambda": fit.lam,
        "gamma": fit.gamma,
        "method": fit.method,
        "beta": [
            {"index": int(j) + 1, "value": float(fit.beta[j])} for j in np.flatnonzero(fit.beta)
        ],
        "p": int(fit.beta.size),
        "knots": [float(v) for v in fit.knots],
        "theta": [float(v) for v in fit.theta],
        "alpha": [float(v) for v in fit.alpha],
        "df_unbiased": df_unbiased(fit) if fit.method == "pltf" else None,
        "objective": float(fit.objective),
        "iterations": int(fit.iterations),
        "converged": bool(fit.converged),
    }
    if seed is not None:
        out["seed"] = seed
    return out


def fit_from_json(obj):
    p = int(obj["p"])
    beta = np.zeros(p)
    for entry in obj["beta"]:
        beta[int(entry["index"]) - 1] = float(entry["value"])
    knots = np.asarray(obj["knots"], dtype=float)
    theta = np.asarray(obj["theta"], dtype=float)
    alpha = np.asarray(obj["alpha"], dtype=float)
    k = int(obj["k"])
    method = obj["method"]
    if method == "pltf":
        g = GFunction(FallingFactorialBasis(knots, k), alpha)
    elif method == "plss":
        g = NaturalCubicG(knots, theta, alpha)
    else:
        raise InputError(f"unsupported method in fit file: {method!r}")
    return PltfFit(
        beta=beta,
        theta=theta,
        alpha=alpha,
        g=g,
        k=k,
        lam=float(obj["lambda"]),
        gamma=float(obj["gamma"]),
        objective=float(obj["objective"]),
        iterations=int(obj["iterations"]),
        converged=bool(obj["converged"]),
        active_beta=np.flatnonzero(beta),
        active_knots=np.zeros(0, dtype=int),
        method=method,
        knots=knots,
    )


def _write_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_fit(path):
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from exc
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise InputError(f"{path}: unsupported schema_version {obj.get('schema_version')}")
    return obj


def _controls(args):
    return BcdControls(
        eps=None if args.tol is None else args.tol,
        max_bcd_iters=args.max_iters,
        inner=SolverControls(tol=args.inner_tol),
    )


def cmd_fit(args):
    y, x, z = load_dataset(args.data)
    design = SortedDesign.from_arrays(y, x, z, ties=args.ties)
    fit = fit_method(design, args.method, args.k, args.lam, args.gamma, ctrl=_controls(args))
    _write_json(fit_to_json(fit), args.out)
    if not fit.converged and not args.allow_nonconverged:
        print(f"fit did not converge in {fit.iterations} iterations", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_predict(args):
    obj = _load_fit(args.fit)
    fit = fit_from_json(obj)
    y, x, z = load_dataset(args.data)
    if x.shape[1] != fit.beta.size:
        raise InputError(
            f"{args.data}: fit expects p = {fit.beta.size} covariates, got {x.shape[1]}"
        )
    yhat = predict(fit, x, z)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["yhat"])
        for v in yhat:
            writer.writerow([repr(float(v))])
    return EXIT_OK


def cmd_cv(args):
    y, x, z = load_dataset(args.data)
    design = SortedDesign.from_arrays(y, x, z, ties=args.ties)
    k = 3 if args.method == "plss" else args.k
    grid = default_grid(design, k, args.n_lambda, args.n_gamma, method=args.method)
    result = cross_validate(
        design,
        k,
        grid,
        folds=args.folds,
        seed=args.seed,
        method=args.method,
        ctrl=_controls(args),
        threads=resolve_threads(args.threads),
    )
    inverse_folds = np.empty(design.n, dtype=int)
    inverse_folds[design.sort_perm] = result.fold_assignments
    out = {
        "schema_version": SCHEMA_VERSION,
        "method": args.method,
        "k": k,
        "folds": args.folds,
        "seed": args.seed,
        "lambdas": [float(v) for v in grid.lambdas],
        "gammas": [float(v) for v in grid.gammas],
        "mean_error": [[float(v) for v in row] for row in result.mean_error],
        "se_error": [[float(v) for v in row] for row in result.se_error],
        "best": {"lambda": result.best[0], "gamma": result.best[1]},
        "best_1se": {"lambda": result.best_1se[0], "gamma": result.best_1se[1]},
        "fold_assignments": [int(v) for v in inverse_folds],
    }
    _write_json(out, args.out)
    return EXIT_OK


def cmd_df(args):
    obj = _load_fit(args.fit)
    out = {"df_unbiased": obj.get("df_unbiased")}
    if args.monte_carlo:
        if args.data is None:
            raise InputError("--monte-carlo requires --data")
        fit = fit_from_json(obj)
        y, x, z = load_dataset(args.data)
        design = SortedDesign.from_arrays(y, x, z)
        truth = predict(fit, design.x, design.z)
        method, k, lam, gamma = fit.method, fit.k, fit.lam, fit.gamma
        ctrl = _controls(args)

        def fitter(y_sim, x_fix, z_fix):
            d = SortedDesign(y_sim, x_fix, z_fix, np.arange(y_sim.size))
            refit = fit_method(d, method, k, lam, gamma, ctrl=ctrl)
            return x_fix @ refit.beta + refit.theta

        df_mc, df_se = df_monte_carlo(
            fitter, design.x, design.z, truth, args.sigma, args.reps, args.seed
        )
        out["df_mc"] = df_mc
        out["df_mc_se"] = df_se
    if args.out:
        _write_json(out, args.out)
    else:
        print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_simulate(args):
    scenario = SimScenario(
        model_id=args.model,
        n=args.n,
        p=args.p,
        tsnr=args.tsnr[0],
        reps=args.reps,
        seed=args.seed,
        k_pltf=args.k,
        methods=tuple(args.methods),
    )
    rows = run_experiment(
        scenario,
        tuning=args.tuning,
        tsnrs=args.tsnr,
        grid_shape=(args.n_lambda, args.n_gamma),
        folds=args.folds,
        ctrl=BcdControls(max_bcd_iters=args.max_iters, inner=SolverControls(tol=args.inner_tol)),
        threads=resolve_threads(args.threads),
    )
    results_to_csv(rows, args.out)
    if args.json:
        results_to_json(rows, args.json)
    return EXIT_OK


def _add_common_fit_flags(p):
    p.add_argument("--tol", type=float, default=None, help="BCD change threshold (default 1e-6 * ||y||_n^2)")
    p.add_argument("--max-iters", type=int, default=100, dest="max_iters")
    p.add_argument("--inner-tol", type=float, default=1e-8, dest="inner_tol")
    p.add_argument("--ties", choices=["error", "average"], default="error")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pltf",
        description="Partial linear regression with lasso + trend filtering",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit one model at fixed penalties")
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--k", type=int, default=2)
    p_fit.add_argument("--lambda", type=float, required=True, dest="lam")
    p_fit.add_argument("--gamma", type=float, required=True)
    p_fit.add_argument("--method", choices=["pltf", "plss"], default="pltf")
    p_fit.add_argument("--out", required=True)
    p_fit.add_argument("--allow-nonconverged", action="store_true")
    _add_common_fit_flags(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_cv = sub.add_parser("cv", help="cross-validate over a penalty grid")
    p_cv.add_argument("--data", required=True)
    p_cv.add_argument("--k", type=int, default=2)
    p_cv.add_argument("--method", choices=["pltf", "plss", "lasso"], default="pltf")
    p_cv.add_argument("--folds", type=int, default=10)
    p_cv.add_argument("--n-lambda", type=int, default=20, dest="n_lambda")
    p_cv.add_argument("--n-gamma", type=int, default=20, dest="n_gamma")
    p_cv.add_argument("--seed", type=int, default=0)
    p_cv.add_argument("--out", required=True)
    p_cv.add_argument("--threads", type=int, default=None)
    _add_common_fit_flags(p_cv)
    p_cv.set_defaults(func=cmd_cv)

    p_pred = sub.add_parser("predict", help="predict from a saved fit")
    p_pred.add_argument("--fit", required=True)
    p_pred.add_argument("--data", required=True)
    p_pred.add_argument("--out", required=True)
    p_pred.set_defaults(func=cmd_predict)

    p_df = sub.add_parser("df", help="degrees of freedom of a saved fit")
    p_df.add_argument("--fit", required=True)
    p_df.add_argument("--monte-carlo", action="store_true", dest="monte_carlo")
    p_df.add_argument("--reps", type=int, default=200)
    p_df.add_argument("--sigma", type=float, default=1.0)
    p_df.add_argument("--seed", type=int, default=0)
    p_df.add_argument("--data", default=None)
    p_df.add_argument("--out", default=None)
    _add_common_fit_flags(p_df)
    p_df.set_defaults(func=cmd_df)

    p_sim = sub.add_parser("simulate", help="benchmark generator and runner")
    p_sim.add_argument("--model", type=int, choices=[1, 2, 3], required=True)
    p_sim.add_argument("--n", type=int, default=500)
    p_sim.add_argument("--p", type=int, default=100)
    p_sim.add_argument("--tsnr", type=float, nargs="+", default=[4.0])
    p_sim.add_argument("--reps", type=int, default=30)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--k", type=int, default=2)
    p_sim.add_argument(
        "--methods", nargs="+", choices=["pltf", "plss", "lasso"], default=["pltf", "plss"]
    )
    p_sim.add_argument("--tuning", choices=["cv", "oracle"], default="oracle")
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--json", default=None)
    p_sim.add_argument("--n-lambda", type=int, default=12, dest="n_lambda")
    p_sim.add_argument("--n-gamma", type=int, default=12, dest="n_gamma")
    p_sim.add_argument("--folds", type=int, default=10)
    p_sim.add_argument("--max-iters", type=int, default=100, dest="max_iters")
    p_sim.add_argument("--inner-tol", type=float, default=1e-8, dest="inner_tol")
    p_sim.add_argument("--threads", type=int, default=None)
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (PltfError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
