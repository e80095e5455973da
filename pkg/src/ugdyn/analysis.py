"""Observables computed from sampled trajectories.

Vicinity residency, the scaling exponent derived from it, finite-size
Lyapunov exponents, the time-averaged clause bound and simple recurrence
diagnostics. Vicinity distances use the x-block spins only.
"""

from __future__ import annotations

import csv
import io
import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .cnf import CnfFormula, decode_assignment
from .dynamics import (DynamicsConfig, SystemState, TrajectoryRecord, advance,
                       energy_V, initial_state)
from .dynamics import _solver
from .exceptions import InvalidInputError, StiffnessError
from .instance import TwoLinInstance

log = logging.getLogger(__name__)

DEFAULT_RADIUS = 0.1
VICINITY_NORMS = ("total", "per_spin")
CONVENTIONS = {
    "vicinity_space": "x_blocks",
    "distance": "L1",
    "y_denominator": "non_transient_time",
    "time_weighting": "left_endpoint",
}

TRANSIENT = -1


# vicinity labels and episodes

@dataclass(frozen=True)
class VicinityLabels:
    """Per-sample vicinity classification.

    ``assignment_id[i]`` indexes into ``assignments`` for samples inside a
    vicinity and is ``TRANSIENT`` otherwise.
    """

    inside: np.ndarray
    distance: np.ndarray
    decoded: np.ndarray
    assignment_id: np.ndarray
    assignments: np.ndarray


def corner_distance(x_spins, decoded, k):
    """L1 distance from x-block spins to the one-hot corner of ``decoded``."""
    x_spins = np.asarray(x_spins, dtype=float)
    n, width = x_spins.shape
    corner = -np.ones((n, width))
    cols = np.arange(decoded.shape[1]) * k + decoded
    corner[np.arange(n)[:, None], cols] = 1.0
    return np.abs(x_spins - corner).sum(axis=1)


def check_vicinity(radius, norm):
    if not radius > 0:
        raise InvalidInputError(f"radius must be positive, got {radius}")
    if norm not in VICINITY_NORMS:
        raise InvalidInputError(f"norm must be one of {VICINITY_NORMS}, got {norm!r}")


def vicinity_episode_labels(record: TrajectoryRecord, formula: CnfFormula,
                            instance: TwoLinInstance | None = None,
                            radius: float = DEFAULT_RADIUS, norm: str = "total") -> VicinityLabels:
    """Label every sample as inside the vicinity of its decoded assignment or transient.

    A sample is inside when the L1 distance between its x-block spins and the
    one-hot corner of the argmax-decoded assignment is at most ``radius``.
    With ``norm="per_spin"`` the distance is divided by the number of x-spins
    (mean absolute deviation), which keeps the ball reachable on frustrated
    instances where a few spins are always in motion.
    """
    check_vicinity(radius, norm)
    xs = record.s[:, : formula.n_x_spins]
    decoded = decode_assignment(xs, formula)
    dist = corner_distance(xs, decoded, formula.k)
    if norm == "per_spin":
        dist = dist / formula.n_x_spins
    inside = dist <= radius
    ids = np.full(decoded.shape[0], TRANSIENT, dtype=np.int64)
    if inside.any():
        uniq, inv = np.unique(decoded[inside], axis=0, return_inverse=True)
        ids[inside] = inv.ravel()
    else:
        uniq = np.zeros((0, formula.n_x), dtype=decoded.dtype)
    return VicinityLabels(inside, dist, decoded, ids, uniq)


def sample_weights(t):
    """Time credited to each sample: the interval up to the next sample."""
    t = np.asarray(t, dtype=float)
    w = np.zeros_like(t)
    if t.size > 1:
        w[:-1] = np.diff(t)
    return w


@dataclass(frozen=True)
class Episode:
    assignment_id: int
    start: float
    end: float

    @property
    def duration(self):
        return self.end - self.start


def episodes(labels: VicinityLabels, t) -> list[Episode]:
    """Maximal runs of constant label; a run ends when the label or the assignment changes."""
    ids = labels.assignment_id
    t = np.asarray(t, dtype=float)
    if ids.size == 0:
        return []
    cuts = np.flatnonzero(np.diff(ids) != 0) + 1
    starts = np.concatenate([[0], cuts])
    ends = np.concatenate([cuts, [ids.size - 1]])
    return [Episode(int(ids[a]), float(t[a]), float(t[b])) for a, b in zip(starts, ends)]


# residency

@dataclass
class ResidencyTable:
    """Pooled vicinity residency ``Y(delta)`` over one or more trajectories.

    ``y_values`` divides by vicinity time (transients excluded);
    ``y_values_total`` divides by total time. ``y_per_trajectory`` holds the
    per-trajectory values with NaN for trajectories that never entered a vicinity.
    An empty table (no vicinity time at all) has ``is_empty`` set and NaN values.
    """

    delta_grid: np.ndarray
    y_values: np.ndarray
    y_values_total: np.ndarray
    vicinity_radius: float
    total_time: float
    vicinity_time: float
    transient_time: float
    ensemble_size: int
    y_per_trajectory: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    vicinity_norm: str = "total"

    @property
    def is_empty(self) -> bool:
        return self.vicinity_time <= 0.0

    @property
    def y_std(self) -> np.ndarray:
        if self.y_per_trajectory.size == 0:
            return np.full(self.delta_grid.shape, np.nan)
        rows = self.y_per_trajectory[~np.isnan(self.y_per_trajectory).any(axis=1)]
        if rows.shape[0] == 0:
            return np.full(self.delta_grid.shape, np.nan)
        return rows.std(axis=0)

    def to_csv(self, path=None, header: dict | None = None) -> str:
        meta = {"kind": "residency", "vicinity_radius": self.vicinity_radius,
                "vicinity_norm": self.vicinity_norm,
                "total_time": self.total_time, "vicinity_time": self.vicinity_time,
                "transient_time": self.transient_time, "ensemble_size": self.ensemble_size,
                "empty": self.is_empty}
        meta.update(CONVENTIONS)
        meta.update(header or {})
        rows = [(d, y, yt, sd) for d, y, yt, sd in
                zip(self.delta_grid, self.y_values, self.y_values_total, self.y_std)]
        return write_table(path, ["delta", "Y", "Y_total_time", "Y_std"], rows, meta)


def check_delta_grid(delta_grid):
    d = np.atleast_1d(np.asarray(delta_grid, dtype=float))
    if d.ndim != 1 or d.size == 0:
        raise InvalidInputError("delta grid must be a non-empty 1-d sequence")
    if np.any(d <= 0) or np.any(d > 1):
        raise InvalidInputError("delta values must lie in (0, 1]")
    if np.any(np.diff(d) <= 0):
        raise InvalidInputError("delta grid must be strictly ascending")
    return d


@dataclass(frozen=True)
class ResidencySeries:
    """Minimal per-trajectory input of :func:`residency_from_series`."""

    t: np.ndarray
    sat_count: np.ndarray
    inside: np.ndarray


def series_from_record(record: TrajectoryRecord, formula: CnfFormula,
                       instance: TwoLinInstance, radius=DEFAULT_RADIUS,
                       norm: str = "total") -> ResidencySeries:
    labels = vicinity_episode_labels(record, formula, instance, radius, norm)
    eq = instance.eq_array
    d = labels.decoded
    count = (d[:, eq[:, 0]] == (d[:, eq[:, 1]] + eq[:, 2]) % instance.k).sum(axis=1)
    return ResidencySeries(np.asarray(record.t, float), count, labels.inside)


def residency_parts(series: ResidencySeries, n_eq: int, deltas, burn_in=0.0):
    """Per-delta vicinity time meeting the threshold, vicinity time and total time."""
    t = series.t
    w = sample_weights(t)
    if burn_in > 0 and t.size:
        w = np.where(t >= t[0] + burn_in, w, 0.0)
    w_in = np.where(series.inside, w, 0.0)
    # count >= delta * n_eq, with slack for grids like 0.33 ~ 1/3
    need = np.asarray(deltas) * n_eq - 1e-9
    hit = np.asarray(series.sat_count)[:, None] >= need[None, :]
    num = (w_in[:, None] * hit).sum(axis=0)
    return num, float(w_in.sum()), float(w.sum())


def pool_residency(parts, deltas, radius, norm="total") -> ResidencyTable:
    """Ordered reduction of :func:`residency_parts` results into one table."""
    deltas = np.asarray(deltas, dtype=float)
    num = np.zeros(deltas.size)
    t_in = t_all = 0.0
    per = np.full((len(parts), deltas.size), np.nan)
    for r, (n_r, i_r, a_r) in enumerate(parts):
        num += n_r
        t_in += i_r
        t_all += a_r
        if i_r > 0:
            per[r] = n_r / i_r
    nan = np.full(deltas.size, np.nan)
    y = num / t_in if t_in > 0 else nan
    y_total = num / t_all if t_all > 0 else nan.copy()
    return ResidencyTable(deltas, y, y_total, float(radius), t_all, t_in, t_all - t_in,
                          len(parts), per, norm)


def residency_from_series(series, n_eq: int, delta_grid, radius=DEFAULT_RADIUS,
                          burn_in: float = 0.0, norm: str = "total") -> ResidencyTable:
    deltas = check_delta_grid(delta_grid)
    if isinstance(series, ResidencySeries):
        series = [series]
    parts = [residency_parts(s, n_eq, deltas, burn_in) for s in series]
    if not parts:
        raise InvalidInputError("no trajectories given")
    return pool_residency(parts, deltas, radius, norm)


def residency(records, formula: CnfFormula, instance: TwoLinInstance, delta_grid,
              radius: float = DEFAULT_RADIUS, burn_in: float = 0.0,
              norm: str = "total") -> ResidencyTable:
    """Fraction of vicinity time spent near assignments satisfying at least ``delta`` of the equations.

    Parameters
    ----------
    records : TrajectoryRecord or sequence of them
        Times are pooled across records.
    delta_grid : sequence of float
        Ascending values in (0, 1].
    radius : float
        L1 radius of the vicinity around each x-block corner.
    burn_in : float
        Initial time excluded from every record.
    norm : {"total", "per_spin"}
        Whether the radius bounds the total or the per-spin distance.

    Returns
    -------
    ResidencyTable
        ``is_empty`` is set (values NaN) when no sample lies in any vicinity.
    """
    if isinstance(records, TrajectoryRecord):
        records = [records]
    series = [series_from_record(r, formula, instance, radius, norm) for r in records]
    return residency_from_series(series, instance.n_eq, delta_grid, radius, burn_in, norm)


# scaling exponent

@dataclass(frozen=True)
class UndefinedExponent:
    """Marker for ``f`` when ``ln beta - ln y`` does not exceed 1; ``raw`` keeps that argument."""

    raw: float

    def __float__(self):
        return float("nan")


def scaling_exponent_f(y, n_x: int, beta: float = 1.0):
    """``log_{n_x}(ln beta - ln y)``, or :class:`UndefinedExponent` when the argument is <= 1."""
    if n_x < 2:
        raise InvalidInputError("n_x must be at least 2")
    if not beta > 0:
        raise InvalidInputError("beta must be positive")
    y = float(y)
    if not 0 <= y <= 1 or np.isnan(y):
        raise InvalidInputError(f"y must lie in [0, 1], got {y}")
    arg = np.log(beta) - np.log(y) if y > 0 else np.inf
    if not arg > 1 or not np.isfinite(arg):
        return UndefinedExponent(float(arg))
    return float(np.log(arg) / np.log(n_x))


def exponent_order_key(y, beta=1.0):
    """Total order consistent with ``f``: larger means harder.

    Values where ``f`` is undefined because ``y`` is large sort below every
    defined exponent; ``y = 0`` sorts above.
    """
    y = float(y)
    return np.inf if y <= 0 else np.log(beta) - np.log(y)


def fit_beta(n_x_values, y_values):
    """Least-squares fit of ``-ln y = n_x**f - ln beta`` across a size sweep.

    Returns ``(beta, f)``. Needs at least two distinct sizes with ``0 < y < 1``.
    """
    from scipy.optimize import minimize_scalar

    n = np.asarray(n_x_values, dtype=float)
    y = np.asarray(y_values, dtype=float)
    ok = (y > 0) & (y < 1)
    n, target = n[ok], -np.log(y[ok])
    if np.unique(n).size < 2:
        raise InvalidInputError("need at least two distinct sizes with 0 < y < 1")

    def loss(f):
        p = n**f
        c = np.mean(p - target)
        return np.sum((p - c - target) ** 2)

    f = minimize_scalar(loss, bounds=(-3.0, 5.0), method="bounded").x
    ln_beta = float(np.mean(n**f - target))
    return float(np.exp(ln_beta)), float(f)


# finite-size Lyapunov exponent

@dataclass
class FsleEstimate:
    alpha: float
    lambda_mean: float
    lambda_std: float
    delta0: float
    delta1: float
    n_segments: int
    rates: np.ndarray
    n_capped: int = 0
    converged: bool = False
    truncated: bool = False

    def __post_init__(self):
        if not self.delta0 < self.delta1:
            raise InvalidInputError("delta0 must be smaller than delta1")
        if self.n_segments < 1:
            raise InvalidInputError("n_segments must be at least 1")


def fsle(formula: CnfFormula, config: DynamicsConfig, delta0: float = 1e-8,
         delta1: float = 1e-4, n_segments: int = 5, seed=None,
         segment_cap: float = 50.0, t_warmup: float = 200.0) -> FsleEstimate:
    """Finite-size Lyapunov exponent by repeated threshold crossing.

    After ``t_warmup`` time units on a single trajectory, a fiducial copy and
    a copy with one x-spin displaced by ``delta0`` are integrated together on
    a shared step sequence until their spin separation (L2) reaches ``delta1``
    or ``segment_cap`` time has elapsed. The segment rate is
    ``ln(delta1/delta0)/elapsed``, or 0 for capped segments. The next segment
    restarts from the fiducial state.

    The displaced spin is drawn uniformly among x-spins not pinned at +-1
    (a pinned spin's displacement is erased by the projection) and is moved
    inwards. Both copies take identical steps and Newton iteration counts,
    so their difference follows the linearized discrete flow.

    If the step size collapses mid-run (large weights at ``alpha = 1``), the
    segments finished so far are kept and ``truncated`` is set.

    Parameters
    ----------
    seed : int, optional
        Drives both the initial state and the perturbation choices.
        Falls back to ``config.seed``.
    """
    if not 0 < delta0 < delta1:
        raise InvalidInputError("need 0 < delta0 < delta1")
    if n_segments < 1 or not segment_cap > 0 or t_warmup < 0:
        raise InvalidInputError("need n_segments >= 1, segment_cap > 0, t_warmup >= 0")
    ss = np.random.SeedSequence(config.seed if seed is None else seed)
    init_seed, pick_seed = ss.spawn(2)
    state = initial_state(formula, config, seed=np.random.default_rng(init_seed).integers(2**63))
    rng = np.random.default_rng(pick_seed)
    N, nxs = formula.N, formula.n_x_spins
    y = state.vector()
    t = 0.0
    if t_warmup > 0:
        Y = y[None, :].copy()
        _, t, _ = advance(formula, Y, 0.0, t_warmup, config)
        y = Y[0]
    gain = np.log(delta1 / delta0)
    rates = []
    capped = 0
    truncated = False
    for _ in range(n_segments):
        free = np.flatnonzero(np.abs(y[:nxs]) < 1.0)
        p = int(rng.choice(free)) if free.size else int(rng.integers(nxs))
        Y = np.stack([y, y])
        Y[1, p] += -delta0 if Y[0, p] > 0 else delta0
        try:
            status, t_new, _ = advance(formula, Y, t, t + segment_cap, config, stop_sep=delta1)
        except StiffnessError as exc:
            log.warning("fsle stopped after %d segments: %s", len(rates), exc)
            truncated = True
            break
        if status == _solver.STOPPED and t_new > t:
            rates.append(gain / (t_new - t))
        else:
            rates.append(0.0)
            capped += 1
        y = Y[0].copy()
        t = t_new
    if not rates:
        raise StiffnessError(t, float(y[N:].max()))
    rates = np.asarray(rates)
    final = SystemState(y[:N], y[N:], t)
    converged = energy_V(formula, final) < 1e-8
    return FsleEstimate(float(config.alpha), float(rates.mean()), float(rates.std()),
                        delta0, delta1, rates.size, rates, capped, bool(converged), truncated)


def fsle_to_csv(estimates, path=None, header: dict | None = None) -> str:
    meta = {"kind": "fsle", "protocol": "threshold_crossing", "separation": "L2_spins"}
    meta.update(header or {})
    rows = [(e.alpha, e.lambda_mean, e.lambda_std, e.delta0, e.delta1, e.n_segments,
             e.n_capped, int(e.converged), int(e.truncated)) for e in estimates]
    return write_table(path, ["alpha", "lambda_mean", "lambda_std", "delta0", "delta1",
                              "n_segments", "n_capped", "converged", "truncated"], rows, meta)


# clause bound and recurrence

def clause_series(record: TrajectoryRecord, formula: CnfFormula, g: int) -> np.ndarray:
    """``K_g`` at every sample; needs the spins of clause ``g`` in the record."""
    if not 0 <= g < formula.M:
        raise InvalidInputError(f"clause index {g} out of range [0, {formula.M})")
    lits = formula.clauses[g].literals
    col = {int(p): i for i, p in enumerate(record.spin_index)}
    missing = [p for p, _ in lits if p not in col]
    if missing:
        raise InvalidInputError(f"record does not store spins {missing}; integrate with store='full'")
    K = np.full(record.n_samples, 2.0 ** -len(lits))
    for p, c in lits:
        K *= 1.0 - c * record.s[:, col[p]]
    return K


def mle_lower_bound(record: TrajectoryRecord, formula: CnfFormula, alpha: float, g: int) -> float:
    """Time average of ``K_g**alpha`` over the record (trapezoidal rule)."""
    if record.n_samples < 2:
        raise InvalidInputError("record needs at least two samples")
    K = np.clip(clause_series(record, formula, g), 0.0, 1.0) ** alpha
    span = record.t[-1] - record.t[0]
    return float(np.trapezoid(K, record.t) / span)


@dataclass(frozen=True)
class ErgodicitySummary:
    n_distinct: int
    max_dwell: float
    max_dwell_assignment: tuple | None
    most_visited: tuple | None
    recurrence_count: int
    n_episodes: int


def ergodicity_diagnostics(record: TrajectoryRecord, formula: CnfFormula,
                           instance: TwoLinInstance | None = None,
                           radius: float = DEFAULT_RADIUS, norm: str = "total") -> ErgodicitySummary:
    """Distinct visited vicinities, longest dwell and recurrences of the most visited one."""
    labels = vicinity_episode_labels(record, formula, instance, radius, norm)
    eps = [e for e in episodes(labels, record.t) if e.assignment_id != TRANSIENT]
    if not eps:
        return ErgodicitySummary(0, 0.0, None, None, 0, 0)
    longest = max(eps, key=lambda e: e.duration)
    visits = Counter(e.assignment_id for e in eps)
    top, count = min(visits.items(), key=lambda kv: (-kv[1], kv[0]))
    asg = labels.assignments
    return ErgodicitySummary(
        n_distinct=len(visits), max_dwell=longest.duration,
        max_dwell_assignment=tuple(int(v) for v in asg[longest.assignment_id]),
        most_visited=tuple(int(v) for v in asg[top]), recurrence_count=count,
        n_episodes=len(eps),
    )


# CSV helpers

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, columns, rows, meta: dict | None = None) -> str:
    """CSV with ``# key=value`` header lines; returns the text and writes it if ``path`` is given."""
    buf = io.StringIO()
    info = {"tool": "ugdyn", "version": __version__}
    info.update(meta or {})
    for key, val in info.items():
        buf.write(f"# {key}={_fmt(val)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def read_table(path_or_text):
    """Inverse of :func:`write_table`: ``(meta, columns, rows)`` with rows as strings."""
    if isinstance(path_or_text, str) and "\n" in path_or_text:
        text = path_or_text
    else:
        with open(path_or_text) as fh:
            text = fh.read()
    meta, body = {}, []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            meta[key] = val
        elif line.strip():
            body.append(line)
    rows = list(csv.reader(body))
    if not rows:
        raise InvalidInputError("table has no column header")
    return meta, rows[0], rows[1:]
