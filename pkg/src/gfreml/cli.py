"""Command-line interface.

Exit codes: 0 on success, 2 for invalid data or arguments, 3 for numerical
failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import flow, mlp, reml
from .errors import DataError, NumericalError
from .harness.config import read_config
from .harness.curves import emit_curves
from .harness.experiments import run_earlystop_experiment, run_test_experiment
from .kernels import KernelSpec, build_gram
from .spectral import eigendecompose
from .vctest import score_test

KERNELS = {"linear": "linear", "rbf": "rbf", "ntk-analytic": "ntk_analytic", "ntk-empirical": "ntk_empirical"}


def _read_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Header row, then feature columns followed by the response column."""
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"malformed CSV {path}: {exc}") from exc
    if data.shape[1] < 2 or data.shape[0] < 1:
        raise DataError(f"{path} needs at least one feature column and a response column")
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path} contains non-finite values")
    return data[:, :-1], data[:, -1]


def _operator(args, X):
    """Gram result and initial predictions for the requested kernel."""
    kind = KERNELS[args.kernel]
    f0 = np.zeros(X.shape[0])
    f0_fn = lambda x: 0.0  # noqa: E731
    if kind == "rbf":
        if args.bandwidth is None:
            raise DataError("--bandwidth is required for the rbf kernel")
        spec = KernelSpec("rbf", bandwidth=args.bandwidth)
    elif kind == "ntk_analytic":
        spec = KernelSpec("ntk_analytic", depth=args.depth or 2)
    elif kind == "ntk_empirical":
        widths = [X.shape[1]] + [args.width] * (args.depth or 1) + [1]
        net = mlp.init_network(widths, seed=args.seed, readout_scale=args.readout_scale)
        spec = KernelSpec("ntk_empirical", network=net)
        f0 = mlp.forward(net, X)
        f0_fn = lambda x: float(mlp.forward(net, x)[0])  # noqa: E731
    else:
        spec = KernelSpec("linear")
    return build_gram(X, spec), f0, f0_fn


def _write_json(obj, out) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise DataError(f"cannot write {out}: {exc}") from exc


def cmd_fit(args) -> None:
    X, y = _read_csv(args.data)
    gram, f0, f0_fn = _operator(args, X)
    op = eigendecompose(gram.H)
    model = flow.build(op, f0, y, cross=gram.cross, f0_fn=f0_fn)
    fit = reml.solve_stopping_time(model.coeffs, op.eigenvalues)
    out = {
        "kernel": args.kernel,
        "n": op.n,
        "rank": op.rank,
        "lambda_max": float(op.eigenvalues[0]),
        "lambda_mean": op.mean_eigenvalue,
        "reml": fit.to_dict(),
    }
    if fit.sigma2_hat > 0:
        out["variance_allocation"] = asdict(flow.variance_allocation(model, fit.t_hat, fit.sigma2_hat))
    _write_json(out, args.out)


def cmd_test(args) -> None:
    X, y = _read_csv(args.data)
    gram, f0, _ = _operator(args, X)
    res = score_test(y, f0, gram.H)
    _write_json({"kernel": args.kernel, "n": int(y.size), **res.to_dict()}, args.out)


def cmd_curves(args) -> None:
    if not (0 < args.tmin < args.tmax) or args.points < 1:
        raise DataError("need 0 < tmin < tmax and points >= 1")
    X, y = _read_csv(args.data)
    gram, f0, f0_fn = _operator(args, X)
    op = eigendecompose(gram.H)
    model = flow.build(op, f0, y, cross=gram.cross, f0_fn=f0_fn)
    grid = np.geomspace(args.tmin, args.tmax, args.points)
    try:
        emit_curves(model, grid, args.out)
    except OSError as exc:
        raise DataError(str(exc)) from exc


def _run_experiment(args, kind: str) -> None:
    cfg, run = read_config(args.config, kind)
    workers = args.workers if args.workers is not None else run["workers"]
    params = asdict(cfg)
    if kind == "earlystop":
        report = run_earlystop_experiment(workers=workers, **params)
    else:
        report = run_test_experiment(workers=workers, **params)
    out = args.out or run["out"]
    if out is None:
        sys.stdout.write(report.to_json())
        return
    try:
        report.write(out)
    except OSError as exc:
        raise DataError(str(exc)) from exc


def _add_kernel_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="CSV with a header row; last column is the response")
    p.add_argument("--kernel", required=True, choices=sorted(KERNELS))
    p.add_argument("--bandwidth", type=float, help="rbf bandwidth")
    p.add_argument("--depth", type=int, help="NTK depth (analytic: default 2; empirical hidden layers: default 1)")
    p.add_argument("--width", type=int, default=500, help="hidden width for ntk-empirical")
    p.add_argument("--seed", type=int, default=0, help="network initialisation seed for ntk-empirical")
    p.add_argument("--readout-scale", type=float, default=1.0, help="output-layer init scale for ntk-empirical")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gfreml", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="REML stopping time and diagnostics on user data")
    _add_kernel_args(p)
    p.add_argument("--out", help="output JSON (stdout if omitted)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("test", help="score test for training-induced signal")
    _add_kernel_args(p)
    p.add_argument("--out", help="output JSON (stdout if omitted)")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("curves", help="diagnostic curves on a log-spaced time grid")
    _add_kernel_args(p)
    p.add_argument("--tmin", type=float, required=True)
    p.add_argument("--tmax", type=float, required=True)
    p.add_argument("--points", type=int, required=True)
    p.add_argument("--out", required=True, help="output CSV; a JSON summary is written alongside")
    p.set_defaults(func=cmd_curves)

    for name, kind, help_text in (
        ("stop", "earlystop", "early-stopping experiment"),
        ("simulate", "test", "score-test calibration and power experiment"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="INI experiment config")
        p.add_argument("--out", help="report JSON (overrides the config's out key)")
        p.add_argument("--workers", type=int, help="parallel replications (capped by GFREML_THREADS)")
        p.set_defaults(func=lambda a, k=kind: _run_experiment(a, k))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
