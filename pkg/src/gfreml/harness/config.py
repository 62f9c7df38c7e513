"""Experiment configuration files.

A config is an INI file with one ``[experiment]`` section of ``key = value``
pairs.  ``full_scale = true`` switches to the full-size settings
(1000 training points and width 1000 for early stopping; 1000 replications
over n in 100..500 for the score test); explicit keys still win.

Example::

    [experiment]
    scenario = case1
    reps = 5
    epochs = 300
    base_seed = 7
    out = report.json
"""

from __future__ import annotations

import configparser
from dataclasses import fields
from pathlib import Path

from ..errors import DataError
from .experiments import EarlyStopConfig, ScoreTestConfig

SECTION = "experiment"
FULL_SCALE_EARLYSTOP = {"n_train": 1000, "width": 1000}
FULL_SCALE_TEST = {"n_grid": (100, 200, 300, 400, 500), "reps": 1000, "width": 500}
RUN_KEYS = ("out", "workers", "full_scale")


def _convert(name: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, tuple):
            parts = [p.strip() for p in raw.replace(";", ",").split(",") if p.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(p) for p in parts)
            return tuple(parts)
        if name == "learning_rate":
            return raw if raw == "auto" else float(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise DataError(f"invalid value {raw!r} for {name}") from exc


def read_config(path, kind: str) -> tuple[EarlyStopConfig | ScoreTestConfig, dict]:
    """Parse a config file into an experiment config plus run options (``out``, ``workers``)."""
    if kind not in ("earlystop", "test"):
        raise ValueError(f"unknown experiment kind {kind!r}")
    path = Path(path)
    parser = configparser.ConfigParser()
    try:
        with path.open() as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise DataError(f"malformed config {path}: {exc}") from exc
    if not parser.has_section(SECTION):
        raise DataError(f"config {path} lacks an [{SECTION}] section")
    items = dict(parser.items(SECTION))

    cls = EarlyStopConfig if kind == "earlystop" else ScoreTestConfig
    defaults = {f.name: f.default for f in fields(cls)}
    unknown = set(items) - set(defaults) - set(RUN_KEYS)
    if unknown:
        raise DataError(f"unknown config keys: {sorted(unknown)}")

    run = {"out": items.get("out"), "workers": None}
    if items.get("workers"):
        run["workers"] = _convert("workers", items["workers"], 1)
    values = {}
    if _convert("full_scale", items.get("full_scale", "false"), False):
        values.update(FULL_SCALE_EARLYSTOP if kind == "earlystop" else FULL_SCALE_TEST)
    for key, raw in items.items():
        if key in defaults:
            values[key] = _convert(key, raw, defaults[key])
    return cls(**values), run
