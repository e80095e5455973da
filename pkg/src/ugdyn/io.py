"""Trajectory tables and state dumps."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .analysis import (CONVENTIONS, DEFAULT_RADIUS, ResidencySeries, check_vicinity,
                       read_table, series_from_record, vicinity_episode_labels,
                       write_table)
from .cnf import CnfFormula
from .dynamics import SystemState, TrajectoryRecord
from .exceptions import ParseError
from .instance import TwoLinInstance

TRAJECTORY_COLUMNS = ["t", "sat_count", "V", "maxK", "log_a_max", "in_vicinity", "x_distance"]


def write_trajectory_csv(record: TrajectoryRecord, formula: CnfFormula, instance: TwoLinInstance,
                         path=None, radius: float = DEFAULT_RADIUS, norm: str = "total",
                         decoded: bool = False, header: dict | None = None) -> str:
    """Columnar CSV of a trajectory.

    ``in_vicinity`` uses ``radius`` and ``norm`` (both recorded in the header);
    ``x_distance`` is always the total x-block L1 distance so the table can be
    re-thresholded later.
    """
    labels = vicinity_episode_labels(record, formula, instance, radius, norm)
    series = series_from_record(record, formula, instance, radius, norm)
    scale = formula.n_x_spins if norm == "per_spin" else 1.0
    meta = {"kind": "trajectory", "instance_hash": instance.content_hash(), "k": instance.k,
            "n_x": instance.n_x, "n_eq": instance.n_eq, "vicinity_radius": radius,
            "vicinity_norm": norm}
    meta.update(CONVENTIONS)
    meta.update({f"config.{key}": val for key, val in record.config.as_dict().items()})
    meta.update(header or {})
    cols = list(TRAJECTORY_COLUMNS)
    if decoded:
        cols += [f"x{i}" for i in range(instance.n_x)]
    rows = []
    for i in range(record.n_samples):
        row = [record.t[i], int(series.sat_count[i]), record.V[i], record.max_K[i],
               record.log_a_max[i], int(labels.inside[i]), labels.distance[i] * scale]
        if decoded:
            row += [int(v) for v in labels.decoded[i]]
        rows.append(row)
    return write_table(path, cols, rows, meta)


@dataclass
class TrajectoryTable:
    """A trajectory CSV read back: header metadata and numeric columns."""

    meta: dict
    columns: dict

    @property
    def n_eq(self) -> int:
        return int(self.meta["n_eq"])

    def series(self, radius: float | None = None, norm: str = "total") -> ResidencySeries:
        """Residency input; a ``radius`` re-thresholds the stored distances."""
        c = self.columns
        if radius is None:
            inside = c["in_vicinity"].astype(bool)
        else:
            check_vicinity(radius, norm)
            dist = c["x_distance"]
            if norm == "per_spin":
                dist = dist / (int(self.meta["n_x"]) * int(self.meta["k"]))
            inside = dist <= radius
        return ResidencySeries(c["t"], c["sat_count"].astype(np.int64), inside)


def read_trajectory_csv(path) -> TrajectoryTable:
    meta, cols, rows = read_table(path)
    missing = [c for c in TRAJECTORY_COLUMNS if c not in cols]
    if missing or "n_eq" not in meta:
        raise ParseError(f"not a trajectory table (missing {missing or ['n_eq header']})",
                         path=str(path))
    try:
        data = np.array(rows, dtype=float).reshape(len(rows), len(cols))
    except ValueError as exc:
        raise ParseError(f"non-numeric trajectory entry: {exc}", path=str(path)) from None
    return TrajectoryTable(meta, {c: data[:, j] for j, c in enumerate(cols)})


def save_state(path, state: SystemState, meta: dict | None = None):
    """Binary dump of a state (spins, ``log a``, time) for restarts."""
    np.savez(path, s=state.s, log_a=state.log_a, t=np.float64(state.t),
             meta=np.array(json.dumps(meta or {}, sort_keys=True)))


def load_state(path):
    """Returns ``(state, meta)``."""
    with np.load(path, allow_pickle=False) as z:
        state = SystemState(z["s"].copy(), z["log_a"].copy(), float(z["t"]))
        meta = json.loads(str(z["meta"]))
    return state, meta
