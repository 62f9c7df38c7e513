"""Diagnostic curves along a training-time grid, written as CSV plus a JSON summary."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .. import reml
from ..flow import FlowModel, fit_in_sample
from ..spectral import pinv_flow_weights

COLUMNS = ("t", "train_mse", "test_mse", "esc", "edf", "v_criterion")


def curve_table(model: FlowModel, t_grid, X_test=None, y_test=None, K_test=None) -> dict[str, np.ndarray]:
    """Column arrays for every grid point; ``test_mse`` needs test data and a cross-operator."""
    t_grid = np.asarray(t_grid, dtype=float).ravel()
    lam = model.op.eigenvalues
    c = model.coeffs
    y = model.f0_train + model.residual
    cols = {
        "t": t_grid,
        "train_mse": np.array([np.mean((y - fit_in_sample(model, t)) ** 2) for t in t_grid]),
        "esc": reml.esc_curve(c, lam, t_grid),
        "edf": np.array([reml.edf(lam, t) for t in t_grid]),
        "v_criterion": np.array([reml.v_criterion(c, lam, t) for t in t_grid]),
    }
    if X_test is not None and y_test is not None:
        if K_test is None:
            if model.cross is None:
                raise ValueError("test curves need a cross-operator")
            K_test = np.vstack([model.cross(x) for x in np.atleast_2d(X_test)])
        f0_test = np.array([model.f0_fn(x) for x in np.atleast_2d(X_test)]) if model.f0_fn else 0.0
        y_test = np.asarray(y_test, dtype=float)
        cols["test_mse"] = np.array(
            [np.mean((y_test - f0_test - K_test @ pinv_flow_weights(model.op, t, model.residual)) ** 2) for t in t_grid]
        )
    return cols


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(".json") if path.suffix != ".json" else path.with_name(path.stem + ".summary.json")


def emit_curves(model: FlowModel, t_grid, path, X_test=None, y_test=None, fit: reml.RemlFit | None = None) -> Path:
    """Write the curve CSV at ``path`` and the REML summary next to it; returns the CSV path."""
    path = Path(path)
    cols = curve_table(model, t_grid, X_test, y_test)
    if fit is None:
        fit = reml.solve_stopping_time(model.coeffs, model.op.eigenvalues)
    header = [k for k in COLUMNS if k in cols]
    try:
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(cols["t"].size):
                writer.writerow([repr(float(cols[k][i])) for k in header])
        summary = fit.to_dict()
        sidecar_path(path).write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write curves to {path}: {exc}") from exc
    return path
