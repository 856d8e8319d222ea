"""Simulation and analysis of the dispersion process on the complete graph."""
from .engine import (
    TIMEOUT,
    DispersionState,
    ParameterError,
    ProcessParams,
    RngStream,
    Trajectory,
    init,
    run_to_dispersion,
    step_lumped,
    step_naive,
)

__version__ = "0.1.0"

__all__ = [
    "TIMEOUT",
    "DispersionState",
    "ParameterError",
    "ProcessParams",
    "RngStream",
    "Trajectory",
    "init",
    "run_to_dispersion",
    "step_lumped",
    "step_naive",
    "__version__",
]
