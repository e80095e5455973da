"""Continuous-time dynamics and its integrator."""

from .core import (DynamicsConfig, SystemState, TrajectoryRecord, advance,
                   clause_value_K, clause_value_K_ml, clause_values, energy_V,
                   initial_state, integrate, jacobian_log, observation_times,
                   rhs, rhs_log)

__all__ = [
    "DynamicsConfig", "SystemState", "TrajectoryRecord", "advance", "clause_value_K",
    "clause_value_K_ml", "clause_values", "energy_V", "initial_state", "integrate",
    "jacobian_log", "observation_times", "rhs", "rhs_log",
]
