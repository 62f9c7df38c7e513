"""Simulation harness: data generation, oracle risk, experiments and curve output."""

from .curves import emit_curves
from .data import SCENARIOS, Dataset, SimScenario, f_star, generate
from .experiments import (
    EarlyStopConfig,
    ExperimentReport,
    ScoreTestConfig,
    parallel_map,
    run_earlystop_experiment,
    run_test_experiment,
)
from .risk import OracleRisk, oracle_risk, t_opt

__all__ = [
    "SCENARIOS",
    "Dataset",
    "EarlyStopConfig",
    "ExperimentReport",
    "OracleRisk",
    "ScoreTestConfig",
    "SimScenario",
    "emit_curves",
    "f_star",
    "generate",
    "oracle_risk",
    "parallel_map",
    "run_earlystop_experiment",
    "run_test_experiment",
    "t_opt",
]
