"""Rydberg heterodyne sensor as a linear time-invariant system."""

from importlib.metadata import PackageNotFoundError, version

from .liouvillian import LiouvillianPair, build_drift_matrix, build_perturbation_matrix
from .params import ConfigError, SensorParams, default_params, load_config, validate_params
from .steady_state import DensityVector, solve_steady_state
from .transfer import (TransferFunction, VelocityGrid, make_velocity_grid, normalize_dc,
                       phase_response, transfer_sweep)

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.1.0"

__all__ = [
    "ConfigError", "DensityVector", "LiouvillianPair", "SensorParams", "TransferFunction",
    "VelocityGrid", "build_drift_matrix", "build_perturbation_matrix", "default_params",
    "load_config", "make_velocity_grid", "normalize_dc", "phase_response",
    "solve_steady_state", "transfer_sweep", "validate_params",
]
