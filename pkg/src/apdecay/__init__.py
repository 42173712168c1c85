"""Decay of almost periodic entropy solutions: signal analysis, non-degeneracy checks, monotone solver, diagnostics."""

__version__ = "0.1.0"

from .ap_analysis import APSignal, FrequencySet, commensurate_project, mean_value  # noqa: E402
from .model import ModelSpec, nondegeneracy_verdict, omega_delta  # noqa: E402
from .solver import Field, GridSpec, SolverConfig, Trajectory, init_field, run  # noqa: E402

__all__ = [
    "APSignal", "FrequencySet", "commensurate_project", "mean_value",
    "ModelSpec", "nondegeneracy_verdict", "omega_delta",
    "Field", "GridSpec", "SolverConfig", "Trajectory", "init_field", "run",
    "__version__",
]
