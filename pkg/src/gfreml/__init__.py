"""Fixed-operator gradient flow, REML-guided early stopping and variance-component score tests."""

from .errors import DataError, GfremlError, NumericalError
from .spectral import SpectralOperator, decay_action, eigendecompose, pinv_flow_weights, project

__all__ = [
    "DataError",
    "GfremlError",
    "NumericalError",
    "SpectralOperator",
    "decay_action",
    "eigendecompose",
    "pinv_flow_weights",
    "project",
]

__version__ = "0.1.0"
