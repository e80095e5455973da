"""Estimator-style wrappers (``fit`` / ``predict`` / ``transform``) over the dynamics.

Hyperparameters live in ``__init__`` and are exposed through ``get_params``;
everything learned from data ends in an underscore.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .analysis import (DEFAULT_RADIUS, ResidencyTable, check_delta_grid, check_vicinity,
                       ergodicity_diagnostics, fsle, residency, series_from_record,
                       residency_parts)
from .cnf import CnfFormula, encode
from .dynamics import DynamicsConfig, TrajectoryRecord, integrate
from .exceptions import InvalidInputError
from .instance import TwoLinInstance, satisfied_counts


def check_instance(X) -> tuple[TwoLinInstance, CnfFormula]:
    """Accept an instance (encoded here) and return ``(instance, formula)``."""
    if isinstance(X, TwoLinInstance):
        return X, encode(X)
    raise InvalidInputError(f"expected a TwoLinInstance, got {type(X).__name__}")


def check_seed(random_state):
    """``None`` or a non-negative int; numpy Generators are not accepted (runs must be replayable)."""
    if random_state is None:
        return None
    if isinstance(random_state, (int, np.integer)) and random_state >= 0:
        return int(random_state)
    raise InvalidInputError(f"random_state must be a non-negative int or None, got {random_state!r}")


def check_records(records) -> list[TrajectoryRecord]:
    if isinstance(records, TrajectoryRecord):
        return [records]
    records = list(records)
    if not records or not all(isinstance(r, TrajectoryRecord) for r in records):
        raise InvalidInputError("expected one or more TrajectoryRecord objects")
    return records


class DynamicsSolver(BaseEstimator):
    """Integrate the dynamics on an instance and read off assignments.

    ``fit(instance)`` runs one trajectory. ``predict()`` returns the
    assignment decoded at the final sample; ``best_assignment_`` is the
    sampled assignment with the most satisfied equations (earliest on ties).
    """

    def __init__(self, alpha=2.0, a_init="ones", rtol=1e-4, atol=1e-6, max_step=1.0,
                 t_end=600.0, dt_obs=0.1, method="auto", store="x", random_state=None):
        self.alpha = alpha
        self.a_init = a_init
        self.rtol = rtol
        self.atol = atol
        self.max_step = max_step
        self.t_end = t_end
        self.dt_obs = dt_obs
        self.method = method
        self.store = store
        self.random_state = random_state

    def _config(self):
        return DynamicsConfig(alpha=self.alpha, a_init=self.a_init, rtol=self.rtol,
                              atol=self.atol, max_step=self.max_step, t_end=self.t_end,
                              dt_obs=self.dt_obs, method=self.method, store=self.store,
                              seed=check_seed(self.random_state))

    def fit(self, X, y=None):
        instance, formula = check_instance(X)
        rec = integrate(formula, self._config())
        self.instance_ = instance
        self.formula_ = formula
        self.record_ = rec
        self.assignment_ = rec.decoded[-1].copy()
        counts = satisfied_counts(instance, rec.decoded)
        best = int(np.argmax(counts))
        self.best_assignment_ = rec.decoded[best].copy()
        self.best_satisfied_ = int(counts[best])
        self.solved_ = bool(rec.V[-1] < 1e-8 and counts[-1] == instance.n_eq)
        return self

    def predict(self, X=None):
        check_is_fitted(self, "assignment_")
        if X is not None and X != self.instance_:
            raise InvalidInputError("predict only applies to the fitted instance")
        return self.assignment_

    def score(self, X=None, y=None):
        """Best sampled fraction of satisfied equations."""
        check_is_fitted(self, "best_satisfied_")
        return self.best_satisfied_ / self.instance_.n_eq


class VicinityResidency(TransformerMixin, BaseEstimator):
    """Residency ``Y(delta)`` over an ensemble of trajectories of one instance.

    ``fit(records, instance=...)`` pools the records into ``table_``.
    ``transform(records)`` returns per-trajectory ``Y`` rows (NaN for records
    that never enter a vicinity).
    """

    def __init__(self, delta_grid=(0.25, 0.5, 0.75, 1.0), radius=DEFAULT_RADIUS,
                 norm="total", burn_in=0.0):
        self.delta_grid = delta_grid
        self.radius = radius
        self.norm = norm
        self.burn_in = burn_in

    def fit(self, X, y=None, *, instance: TwoLinInstance):
        records = check_records(X)
        check_vicinity(self.radius, self.norm)
        inst, formula = check_instance(instance)
        self.instance_ = inst
        self.formula_ = formula
        self.deltas_ = check_delta_grid(self.delta_grid)
        self.table_: ResidencyTable = residency(records, formula, inst, self.deltas_,
                                                self.radius, self.burn_in, self.norm)
        return self

    def transform(self, X):
        check_is_fitted(self, "table_")
        rows = []
        for rec in check_records(X):
            ser = series_from_record(rec, self.formula_, self.instance_, self.radius, self.norm)
            num, t_in, _ = residency_parts(ser, self.instance_.n_eq, self.deltas_, self.burn_in)
            rows.append(num / t_in if t_in > 0 else np.full(self.deltas_.size, np.nan))
        return np.vstack(rows)

    def fit_transform(self, X, y=None, *, instance: TwoLinInstance):
        return self.fit(X, instance=instance).transform(X)

    def diagnostics(self, X):
        """Ergodicity summaries, one per record."""
        check_is_fitted(self, "table_")
        return [ergodicity_diagnostics(r, self.formula_, self.instance_, self.radius, self.norm)
                for r in check_records(X)]


class FsleEstimator(BaseEstimator):
    """Finite-size Lyapunov exponent of an instance at one ``alpha``, averaged over seeds."""

    def __init__(self, alpha=2.0, delta0=1e-8, delta1=1e-4, n_segments=5, segment_cap=50.0,
                 t_warmup=200.0, n_seeds=1, a_init="ones", rtol=1e-4, atol=1e-6,
                 random_state=None):
        self.alpha = alpha
        self.delta0 = delta0
        self.delta1 = delta1
        self.n_segments = n_segments
        self.segment_cap = segment_cap
        self.t_warmup = t_warmup
        self.n_seeds = n_seeds
        self.a_init = a_init
        self.rtol = rtol
        self.atol = atol
        self.random_state = random_state

    def fit(self, X, y=None):
        _, formula = check_instance(X)
        if self.n_seeds < 1:
            raise InvalidInputError("n_seeds must be >= 1")
        base = check_seed(self.random_state) or 0
        cfg = DynamicsConfig(alpha=self.alpha, a_init=self.a_init, rtol=self.rtol, atol=self.atol)
        self.estimates_ = [
            fsle(formula, cfg, self.delta0, self.delta1, self.n_segments,
                 seed=np.random.SeedSequence([base, j]).generate_state(1)[0],
                 segment_cap=self.segment_cap, t_warmup=self.t_warmup)
            for j in range(self.n_seeds)
        ]
        means = np.array([e.lambda_mean for e in self.estimates_])
        self.lambda_mean_ = float(means.mean())
        self.lambda_std_ = float(means.std())
        return self
