"""Continuous-time dynamics for one-hot 2-Lin-k formulas.

Spins follow the negative gradient of ``V(s, a) = sum_m a_m K_m(s)**2`` and the
clause weights grow as ``da_m/dt = a_m K_m**alpha``. Weights are integrated as
``log a`` because they grow exponentially on unsatisfiable instances.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from ..cnf import CnfFormula, decode_assignment
from ..exceptions import (InvalidInputError, NumericalOverflowError,
                          StiffnessError)
from . import _kernels, _solver

A_INIT_RULES = ("ones", "uniform")
METHODS = {"auto": _solver.AUTO, "rk45": _solver.EXPLICIT, "trbdf2": _solver.IMPLICIT}
STORE_MODES = ("x", "full")


@dataclass(frozen=True)
class DynamicsConfig:
    """Integration settings.

    ``dt_obs`` is the sampling cadence of the recorded trajectory, not the
    step size; steps are adaptive. ``store="x"`` keeps only the x-block spins
    per sample, ``"full"`` keeps every spin and every ``log a``.
    """

    alpha: float = 2.0
    a_init: str = "ones"
    rtol: float = 1e-4
    atol: float = 1e-6
    max_step: float = 1.0
    t_end: float = 600.0
    dt_obs: float = 0.1
    clamp_mode: str = "hard"
    seed: int | None = None
    method: str = "auto"
    store: str = "x"
    max_steps: int = 50_000_000

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidInputError(f"alpha must be positive, got {self.alpha}")
        if not (self.rtol > 0 and self.atol > 0):
            raise InvalidInputError("tolerances must be positive")
        if not (self.max_step > 0 and self.t_end > 0 and self.dt_obs > 0):
            raise InvalidInputError("max_step, t_end and dt_obs must be positive")
        if self.a_init not in A_INIT_RULES:
            raise InvalidInputError(f"a_init must be one of {A_INIT_RULES}")
        if self.clamp_mode != "hard":
            raise InvalidInputError("only clamp_mode='hard' is supported")
        if self.method not in METHODS:
            raise InvalidInputError(f"method must be one of {tuple(METHODS)}")
        if self.store not in STORE_MODES:
            raise InvalidInputError(f"store must be one of {STORE_MODES}")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def as_dict(self):
        return dataclasses.asdict(self)


@dataclass
class SystemState:
    s: np.ndarray
    log_a: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        self.log_a = np.asarray(self.log_a, dtype=float)

    @classmethod
    def from_a(cls, s, a, t=0.0):
        a = np.asarray(a, dtype=float)
        if np.any(a <= 0):
            raise InvalidInputError("auxiliary weights must be positive")
        return cls(s, np.log(a), t)

    @property
    def a(self):
        return np.exp(self.log_a)

    def vector(self):
        return np.concatenate([self.s, self.log_a])


def initial_state(formula: CnfFormula, config: DynamicsConfig, seed=None) -> SystemState:
    """Uniform spins in (-1, 1); weights all one or uniform in (0, 1)."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    s = rng.uniform(-1.0, 1.0, formula.N)
    if config.a_init == "ones":
        log_a = np.zeros(formula.M)
    else:
        a = rng.uniform(0.0, 1.0, formula.M)
        log_a = np.log(np.maximum(a, np.finfo(float).tiny))
    return SystemState(s, log_a, 0.0)


def _arrays(formula):
    return (np.ascontiguousarray(formula.lit_var), np.ascontiguousarray(formula.lit_sign),
            2.0 ** -formula.clause_len.astype(float))


def _check_spins(formula, s):
    s = np.asarray(s, dtype=float)
    if s.shape != (formula.N,):
        raise InvalidInputError(f"spin vector has shape {s.shape}, expected ({formula.N},)")
    return s


def clause_values(formula: CnfFormula, s) -> np.ndarray:
    """All ``K_m(s) = 2**-|m| prod_{p in m} (1 - c_mp s_p)``."""
    s = _check_spins(formula, s)
    var, sign, norm = _arrays(formula)
    K = np.empty(formula.M)
    _kernels.clause_K(s, var, sign, norm, K)
    return K


def clause_value_K(formula: CnfFormula, s, m: int) -> float:
    s = _check_spins(formula, s)
    lits = formula.clauses[m].literals
    return 2.0 ** -len(lits) * float(np.prod([1.0 - c * s[p] for p, c in lits]))


def clause_value_K_ml(formula: CnfFormula, s, m: int, l: int) -> float:
    """``K_m`` with the factor of spin ``l`` left out (same normalization)."""
    s = _check_spins(formula, s)
    lits = formula.clauses[m].literals
    if l not in {p for p, _ in lits}:
        raise InvalidInputError(f"spin {l} does not occur in clause {m}")
    return 2.0 ** -len(lits) * float(np.prod([1.0 - c * s[p] for p, c in lits if p != l]))


def energy_V(formula: CnfFormula, state: SystemState) -> float:
    K = clause_values(formula, state.s)
    return float(np.sum(np.exp(state.log_a) * K * K))


def rhs(formula: CnfFormula, state: SystemState, alpha: float):
    """Vector field ``(ds/dt, da/dt)`` in the original (not logarithmic) weights."""
    y = state.vector()
    out = np.empty_like(y)
    var, sign, norm = _arrays(formula)
    _kernels.rhs(y, formula.N, var, sign, norm, float(alpha), out)
    ds = out[: formula.N]
    da = np.exp(state.log_a) * out[formula.N:]
    return ds, da


def rhs_log(formula: CnfFormula, y, alpha: float) -> np.ndarray:
    """Vector field on the packed state ``[s, log a]``."""
    y = np.ascontiguousarray(y, dtype=float)
    out = np.empty_like(y)
    var, sign, norm = _arrays(formula)
    _kernels.rhs(y, formula.N, var, sign, norm, float(alpha), out)
    return out


def jacobian_log(formula: CnfFormula, y, alpha: float) -> np.ndarray:
    """Dense Jacobian of :func:`rhs_log` (for testing and small systems)."""
    y = np.ascontiguousarray(y, dtype=float)
    N, M = formula.N, formula.M
    var, sign, norm = _arrays(formula)
    A = np.empty((N, N))
    Bv = np.zeros(var.shape)
    Cv = np.zeros(var.shape)
    _kernels.jacobian_parts(y, N, var, sign, norm, float(alpha), A, Bv, Cv)
    J = np.zeros((N + M, N + M))
    J[:N, :N] = A
    for m in range(M):
        for r in range(var.shape[1]):
            if sign[m, r] != 0:
                J[var[m, r], N + m] += Bv[m, r]
                J[N + m, var[m, r]] += Cv[m, r]
    return J


@dataclass
class TrajectoryRecord:
    """Time-sampled trajectory with per-sample observables.

    ``s`` holds the spins listed in ``spin_index`` (the x-blocks always come
    first). ``log_a`` is only present for ``store="full"``.
    """

    t: np.ndarray
    s: np.ndarray
    spin_index: np.ndarray
    V: np.ndarray
    max_K: np.ndarray
    log_a_max: np.ndarray
    decoded: np.ndarray
    equation_sat: np.ndarray
    final_state: SystemState
    config: DynamicsConfig
    log_a: np.ndarray | None = None
    max_abs_s: np.ndarray | None = None
    min_K: np.ndarray | None = None
    stats: dict = field(default_factory=dict)

    @property
    def sat_count(self) -> np.ndarray:
        return self.equation_sat.sum(axis=1)

    @property
    def n_samples(self) -> int:
        return self.t.shape[0]

    def x_spins(self, formula: CnfFormula) -> np.ndarray:
        return self.s[:, : formula.n_x_spins]

    def spins(self, formula: CnfFormula) -> np.ndarray:
        if self.s.shape[1] != formula.N:
            raise InvalidInputError("record was stored with store='x'; full spins unavailable")
        return self.s


def _sat_matrix(decoded, equations, k):
    eq = np.asarray(equations)
    return decoded[:, eq[:, 0]] == (decoded[:, eq[:, 1]] + eq[:, 2]) % k


def observation_times(t0, t_end, dt_obs):
    n = int(np.floor((t_end - t0) / dt_obs + 1e-9))
    return t0 + dt_obs * np.arange(n + 1)


def advance(formula: CnfFormula, Y, t0, t_end, config: DynamicsConfig, obs=None,
            stop_sep=0.0, keep_s=None, keep_la=None, alpha=None):
    """Integrate rows of the packed states ``Y`` in place on a shared step sequence.

    Returns ``(status, t_reached, samples)``; ``samples`` is a dict of the
    recorded arrays truncated to the filled length. Raises on integration
    failure.
    """
    Y = np.ascontiguousarray(np.atleast_2d(Y), dtype=float)
    if Y.shape[1] != formula.N + formula.M:
        raise InvalidInputError("packed state has the wrong length")
    C = Y.shape[0]
    var, sign, norm = _arrays(formula)
    obs = np.zeros(0) if obs is None else np.ascontiguousarray(obs, dtype=float)
    keep_s = np.arange(formula.N) if keep_s is None else np.asarray(keep_s, dtype=np.int64)
    keep_la = np.zeros(0, dtype=np.int64) if keep_la is None else np.asarray(keep_la, dtype=np.int64)
    n_obs = obs.shape[0]
    out_t = np.empty(n_obs)
    out_s = np.empty((n_obs, C, keep_s.size))
    out_la = np.empty((n_obs, C, keep_la.size))
    out_scal = np.empty((n_obs, C, 5))
    info = np.zeros(6, dtype=np.int64)
    alpha = config.alpha if alpha is None else alpha
    status, t, k, t_switch = _solver.integrate_copies(
        Y, float(t0), float(t_end), obs, var, sign, norm, formula.N, float(alpha),
        config.rtol, config.atol, min(1e-3, config.max_step), config.max_step,
        METHODS[config.method], config.max_steps, float(stop_sep),
        keep_s, keep_la, out_t, out_s, out_la, out_scal, info,
    )
    if status == _solver.UNDERFLOW or status == _solver.TOO_MANY_STEPS:
        raise StiffnessError(t, float(Y[:, formula.N:].max()))
    if status == _solver.NONFINITE:
        raise NumericalOverflowError(t)
    stats = dict(nfev=int(info[0]), njev=int(info[1]), n_inverse=int(info[2]),
                 n_accepted=int(info[3]), n_rejected=int(info[4]),
                 final_method="trbdf2" if info[5] == _solver.IMPLICIT else "rk45",
                 t_switch=float(t_switch))
    # interpolated log a is monotone up to rounding; remove the last-ulp wiggles
    log_a = np.maximum.accumulate(out_la[:k], axis=0)
    log_a_max = np.maximum.accumulate(out_scal[:k, :, 2], axis=0)
    samples = dict(t=out_t[:k], s=out_s[:k], log_a=log_a, V=out_scal[:k, :, 0],
                   max_K=out_scal[:k, :, 1], log_a_max=log_a_max,
                   max_abs_s=out_scal[:k, :, 3], min_K=out_scal[:k, :, 4], stats=stats)
    return status, t, samples


def integrate(formula: CnfFormula, config: DynamicsConfig, state: SystemState | None = None,
              seed=None) -> TrajectoryRecord:
    """Integrate one trajectory to ``config.t_end`` and record samples every ``dt_obs``.

    The initial state is drawn from ``seed`` (or ``config.seed``) unless given.
    Spins are clamped to ``[-1, 1]`` after every accepted step; ``log a`` is
    unconstrained.

    Raises
    ------
    StiffnessError
        Step size collapsed (reports ``t`` and ``max log a``).
    NumericalOverflowError
        The state became non-finite.
    """
    if state is None:
        state = initial_state(formula, config, seed)
    t0 = float(state.t)
    if config.t_end <= t0:
        raise InvalidInputError(f"t_end={config.t_end} must exceed start time {t0}")
    Y = state.vector()[None, :].copy()
    obs = observation_times(t0, config.t_end, config.dt_obs)
    if config.store == "x":
        keep_s = np.arange(formula.n_x_spins)
        keep_la = None
    else:
        keep_s = np.arange(formula.N)
        keep_la = np.arange(formula.M)
    _, t, smp = advance(formula, Y, t0, config.t_end, config, obs=obs,
                        keep_s=keep_s, keep_la=keep_la)
    s = smp["s"][:, 0, :]
    decoded = decode_assignment(s, formula)
    final = SystemState(Y[0, : formula.N].copy(), Y[0, formula.N:].copy(), t)
    return TrajectoryRecord(
        t=smp["t"], s=s, spin_index=keep_s, V=smp["V"][:, 0], max_K=smp["max_K"][:, 0],
        log_a_max=smp["log_a_max"][:, 0], decoded=decoded,
        equation_sat=_sat_matrix(decoded, formula.equations, formula.k),
        final_state=final, config=config,
        log_a=smp["log_a"][:, 0, :] if keep_la is not None else None,
        max_abs_s=smp["max_abs_s"][:, 0], min_K=smp["min_K"][:, 0], stats=smp["stats"],
    )
