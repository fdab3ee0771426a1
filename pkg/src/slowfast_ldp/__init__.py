"""Large-deviation toolkit for mean-field jump processes driven by a fast process."""
from .averaging import Path, averaged_field, deterministic_start, lln_solve, rate_functional
from .hamiltonian import SlowPoint, hamiltonian, hamiltonian_gradient, variational_check
from .io import load_model, model_from_dict
from .lagrangian import double_opt_lagrangian, legendre_lagrangian
from .model import (
    EdgeSet,
    FiniteChain,
    Momentum,
    ModelSpec,
    SlowState,
    TorusDiffusion,
    Velocity,
    validate_model,
)
from .simulator import SimConfig, averaging_error, scgf_estimate, simulate

__all__ = [
    "EdgeSet", "FiniteChain", "Momentum", "ModelSpec", "Path", "SimConfig", "SlowPoint",
    "SlowState", "TorusDiffusion", "Velocity", "averaged_field", "averaging_error",
    "deterministic_start", "double_opt_lagrangian", "hamiltonian", "hamiltonian_gradient",
    "legendre_lagrangian", "lln_solve", "load_model", "model_from_dict", "rate_functional",
    "scgf_estimate", "simulate", "validate_model", "variational_check",
]
