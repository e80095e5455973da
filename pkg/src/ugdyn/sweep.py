"""Deterministic ensemble sweeps over alphabet size and unsat fraction.

Every (epsilon, k) cell gets one instance drawn from ``(master_seed, cell)``
and ``ensemble`` trajectories seeded from ``(master_seed, cell, member)``.
Trajectories run in parallel; results are reduced in a fixed order, so the
output files do not depend on ``worker_count``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from . import __version__
from .analysis import (CONVENTIONS, DEFAULT_RADIUS, ResidencySeries, UndefinedExponent,
                       check_delta_grid, check_vicinity, corner_distance, fsle,
                       pool_residency, residency_parts, scaling_exponent_f, write_table)
from .cnf import decode_assignment, encode
from .dynamics import DynamicsConfig, integrate
from .exceptions import InvalidInputError, NumericalError, UgdynError
from .instance import TwoLinInstance, generate_polygon_instance, write_instance

log = logging.getLogger(__name__)

DEFAULT_DELTAS = tuple(round(0.05 * i, 2) for i in range(1, 21))
# settings that change where or how fast results are produced, not what they are
NON_RESULT_FIELDS = ("worker_count", "output_dir")


@dataclass(frozen=True)
class SweepConfig:
    """Sweep settings. The defaults are the desk-scale ones; see :meth:`paper_scale`."""

    k_list: tuple = (4, 6, 8)
    epsilon_list: tuple = (0.4,)
    delta_grid: tuple = DEFAULT_DELTAS
    alpha: float = 2.0
    n_x: int = 8
    n_eq: int = 20
    ensemble: int = 50
    t_end: float = 600.0
    master_seed: int = 0
    worker_count: int = 1
    output_dir: str = "sweep_out"
    radius: float = DEFAULT_RADIUS
    vicinity_norm: str = "total"
    beta: float = 1.0
    a_init: str = "ones"
    rtol: float = 1e-4
    atol: float = 1e-6
    dt_obs: float = 0.1
    method: str = "auto"

    def __post_init__(self):
        object.__setattr__(self, "k_list", tuple(int(k) for k in self.k_list))
        object.__setattr__(self, "epsilon_list", tuple(float(e) for e in self.epsilon_list))
        object.__setattr__(self, "delta_grid", tuple(float(d) for d in self.delta_grid))
        if not self.k_list or min(self.k_list) < 2:
            raise InvalidInputError("k_list needs values >= 2")
        if not self.epsilon_list or not all(0 <= e < 1 for e in self.epsilon_list):
            raise InvalidInputError("epsilon values must lie in [0, 1)")
        check_delta_grid(self.delta_grid)
        if self.ensemble < 1 or self.worker_count < 1:
            raise InvalidInputError("ensemble and worker_count must be >= 1")
        if not self.beta > 0:
            raise InvalidInputError("beta must be positive")
        check_vicinity(self.radius, self.vicinity_norm)
        self.dynamics()  # validates the integration settings

    @classmethod
    def paper_scale(cls, **overrides):
        """n_x = 11, n_eq = 30, k up to 30, 300 trajectories per cell (hours of CPU)."""
        base = dict(k_list=(4, 6, 8, 10, 15, 20, 25, 30), n_x=11, n_eq=30, ensemble=300)
        base.update(overrides)
        return cls(**base)

    def target_unsat(self, epsilon) -> int:
        return int(round(epsilon * self.n_eq))

    def cells(self):
        """``(cell_index, epsilon, k)`` in output order."""
        out = []
        for e in self.epsilon_list:
            for k in self.k_list:
                out.append((len(out), e, k))
        return out

    def dynamics(self, seed=None) -> DynamicsConfig:
        return DynamicsConfig(alpha=self.alpha, a_init=self.a_init, rtol=self.rtol,
                              atol=self.atol, t_end=self.t_end, dt_obs=self.dt_obs,
                              method=self.method, seed=seed, store="x")

    def result_fields(self) -> dict:
        d = dataclasses.asdict(self)
        for key in NON_RESULT_FIELDS:
            d.pop(key)
        return d

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def derive_seed(*key) -> int:
    """63-bit seed from a tuple of non-negative integers."""
    ss = np.random.SeedSequence(list(key))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def cell_instance(cfg: SweepConfig, cell: int, epsilon: float, k: int) -> TwoLinInstance:
    return generate_polygon_instance(cfg.n_x, k, cfg.target_unsat(epsilon),
                                     seed=derive_seed(cfg.master_seed, cell), n_eq=cfg.n_eq)


@dataclass
class MemberResult:
    cell: int
    member: int
    seed: int
    ok: bool
    error: str = ""
    t: np.ndarray | None = None
    sat_count: np.ndarray | None = None
    x_distance: np.ndarray | None = None
    max_abs_s: float = float("nan")
    min_K: float = float("nan")
    max_K: float = float("nan")
    final_log_a_max: float = float("nan")

    def series(self, radius, norm, n_x_spins) -> ResidencySeries:
        dist = self.x_distance / n_x_spins if norm == "per_spin" else self.x_distance
        return ResidencySeries(self.t, self.sat_count, dist <= radius)


def run_member(instance: TwoLinInstance, dyn: DynamicsConfig, cell: int, member: int) -> MemberResult:
    """One trajectory reduced to what the sweep needs."""
    try:
        formula = encode(instance)
        rec = integrate(formula, dyn)
    except NumericalError as exc:
        return MemberResult(cell, member, dyn.seed, False, f"{type(exc).__name__}: {exc}")
    xs = rec.s[:, : formula.n_x_spins]
    decoded = decode_assignment(xs, formula)
    return MemberResult(
        cell, member, dyn.seed, True, "", rec.t, rec.sat_count.astype(np.int64),
        corner_distance(xs, decoded, formula.k), float(rec.max_abs_s.max()),
        float(rec.min_K.min()), float(rec.max_K.max()), float(rec.log_a_max[-1]),
    )


@dataclass
class CellResult:
    cell: int
    epsilon: float
    k: int
    instance: TwoLinInstance | None
    members: list = field(default_factory=list)
    error: str = ""

    @property
    def ok_members(self):
        return [m for m in self.members if m.ok]

    @property
    def failed(self) -> bool:
        return bool(self.error) or any(not m.ok for m in self.members)

    def residency(self, deltas, radius, norm):
        n_xs = self.instance.n_x * self.k
        parts = [residency_parts(m.series(radius, norm, n_xs), self.instance.n_eq, deltas)
                 for m in self.ok_members]
        return pool_residency(parts, deltas, radius, norm)


@dataclass
class SweepResult:
    config: SweepConfig
    cells: list
    files: dict = field(default_factory=dict)

    @property
    def partial(self) -> bool:
        return any(c.failed for c in self.cells)

    def residency(self, radius=None, norm=None):
        """``{(epsilon, k): ResidencyTable}`` under any vicinity convention."""
        cfg = self.config
        radius = cfg.radius if radius is None else radius
        norm = cfg.vicinity_norm if norm is None else norm
        deltas = np.asarray(cfg.delta_grid)
        return {(c.epsilon, c.k): c.residency(deltas, radius, norm)
                for c in self.cells if c.instance is not None and c.ok_members}


def run_sweep(cfg: SweepConfig, write: bool = True) -> SweepResult:
    """Generate, integrate and reduce every cell; optionally write the result tree."""
    cells = []
    jobs = []
    for cell, eps, k in cfg.cells():
        try:
            inst = cell_instance(cfg, cell, eps, k)
        except UgdynError as exc:
            log.error("cell %d (epsilon=%s, k=%d) quarantined: %s", cell, eps, k, exc)
            cells.append(CellResult(cell, eps, k, None, error=f"{type(exc).__name__}: {exc}"))
            continue
        cells.append(CellResult(cell, eps, k, inst))
        for j in range(cfg.ensemble):
            dyn = cfg.dynamics(seed=derive_seed(cfg.master_seed, cell, j + 1))
            jobs.append(delayed(run_member)(inst, dyn, cell, j))
    results = Parallel(n_jobs=cfg.worker_count)(jobs) if jobs else []
    by_cell = {c.cell: c for c in cells}
    for r in results:
        by_cell[r.cell].members.append(r)
    for c in cells:
        for m in c.members:
            if not m.ok:
                log.warning("cell %d member %d failed: %s", c.cell, m.member, m.error)
    out = SweepResult(cfg, cells)
    if write:
        write_sweep(out)
    return out


# output tree

def _header(cfg: SweepConfig, extra=None):
    meta = {"tool": "ugdyn", "version": __version__}
    meta.update(CONVENTIONS)
    meta["vicinity_norm"] = cfg.vicinity_norm
    meta["vicinity_radius"] = cfg.radius
    meta["beta"] = cfg.beta
    meta.update({f"config.{k}": _plain(v) for k, v in cfg.result_fields().items()})
    meta.update(extra or {})
    return meta


def _plain(v):
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return v


def exponent_rows(result: SweepResult, tables=None):
    """``(epsilon, k, delta, Y, f, ln(beta) - ln(Y), defined)`` for every cell and delta."""
    cfg = result.config
    tables = result.residency() if tables is None else tables
    rows = []
    for c in result.cells:
        tab = tables.get((c.epsilon, c.k))
        if tab is None:
            continue
        for d, y in zip(tab.delta_grid, tab.y_values):
            if np.isnan(y):
                rows.append((c.epsilon, c.k, d, y, float("nan"), float("nan"), 0))
                continue
            f = scaling_exponent_f(y, cfg.n_x, cfg.beta)
            if isinstance(f, UndefinedExponent):
                rows.append((c.epsilon, c.k, d, y, float("nan"), f.raw, 0))
            else:
                rows.append((c.epsilon, c.k, d, y, f, np.log(cfg.beta) - np.log(y), 1))
    return rows


def write_sweep(result: SweepResult):
    cfg = result.config
    root = Path(cfg.output_dir)
    (root / "instances").mkdir(parents=True, exist_ok=True)
    tables = result.residency()
    files = {}

    rows = []
    for c in result.cells:
        tab = tables.get((c.epsilon, c.k))
        if tab is None:
            continue
        for d, y, ys, yt in zip(tab.delta_grid, tab.y_values, tab.y_std, tab.y_values_total):
            rows.append((c.epsilon, c.k, d, y, ys, yt, tab.vicinity_time, tab.total_time,
                         len(c.ok_members), len(c.members) - len(c.ok_members)))
    files["residency"] = "residency_vs_k.csv"
    write_table(root / files["residency"],
                ["epsilon", "k", "delta", "Y", "Y_std", "Y_total_time", "vicinity_time",
                 "total_time", "n_ok", "n_failed"], rows, _header(cfg, {"kind": "residency_vs_k"}))

    exp = exponent_rows(result, tables)
    files["exponent_k"] = "exponent_delta_k.csv"
    write_table(root / files["exponent_k"],
                ["epsilon", "k", "delta", "Y", "f", "log_arg", "defined"], exp,
                _header(cfg, {"kind": "exponent_delta_k"}))
    gap_rows = [(k, 1.0 - e, d, (1.0 - e) - d, y, f, arg, ok) for e, k, d, y, f, arg, ok in exp]
    files["exponent_gap"] = "exponent_delta_gap.csv"
    write_table(root / files["exponent_gap"],
                ["k", "one_minus_epsilon", "delta", "gap", "Y", "f", "log_arg", "defined"],
                gap_rows, _header(cfg, {"kind": "exponent_delta_gap"}))

    cells_meta = []
    for c in result.cells:
        entry = {"cell": c.cell, "epsilon": c.epsilon, "k": c.k, "error": c.error}
        if c.instance is not None:
            name = f"instances/cell{c.cell:03d}_k{c.k}_eps{c.epsilon:g}.2link"
            write_instance(c.instance, root / name)
            entry.update(instance_file=name, instance_hash=c.instance.content_hash(),
                         instance_seed=derive_seed(cfg.master_seed, c.cell),
                         target_unsat=cfg.target_unsat(c.epsilon),
                         designed_opt=str(c.instance.designed_opt),
                         certificate=c.instance.certificate)
        entry["members"] = [{"member": m.member, "seed": m.seed, "ok": m.ok, "error": m.error,
                             "max_abs_s": m.max_abs_s, "min_K": m.min_K, "max_K": m.max_K,
                             "final_log_a_max": m.final_log_a_max} for m in c.members]
        cells_meta.append(entry)
    manifest = {
        "tool": "ugdyn", "version": __version__, "config": _jsonable(cfg.result_fields()),
        "conventions": dict(CONVENTIONS, vicinity_norm=cfg.vicinity_norm,
                            vicinity_radius=cfg.radius, beta=cfg.beta,
                            target_unsat_rule="round(epsilon * n_eq)",
                            instance_policy="one instance per (epsilon, k) cell",
                            seed_rule="SeedSequence([master_seed, cell]) / [master_seed, cell, member+1]"),
        "cells": cells_meta,
        "partial": result.partial,
        "files": {key: {"path": name, "sha256": _sha256(root / name)} for key, name in files.items()},
    }
    with open(root / "manifest.json", "w") as fh:
        json.dump(_jsonable(manifest), fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
    result.files = {key: str(root / name) for key, name in files.items()}
    result.files["manifest"] = str(root / "manifest.json")
    return result.files


def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, os.PathLike):
        return str(obj)
    return obj



# FSLE study

@dataclass(frozen=True)
class FsleStudyConfig:
    """Average FSLE per alpha over several instances and initial conditions."""

    alpha_list: tuple = (1.0, 1.5, 2.0)
    n_seeds: int = 50
    master_seed: int = 0
    delta0: float = 1e-8
    delta1: float = 1e-4
    n_segments: int = 5
    segment_cap: float = 50.0
    t_warmup: float = 200.0
    a_init: str = "ones"
    rtol: float = 1e-4
    atol: float = 1e-6
    worker_count: int = 1

    def __post_init__(self):
        object.__setattr__(self, "alpha_list", tuple(float(a) for a in self.alpha_list))
        if not self.alpha_list or min(self.alpha_list) <= 0:
            raise InvalidInputError("alpha values must be positive")
        if self.n_seeds < 1 or self.worker_count < 1:
            raise InvalidInputError("n_seeds and worker_count must be >= 1")


def _fsle_member(instance, dyn, study: FsleStudyConfig, seed):
    try:
        est = fsle(encode(instance), dyn, study.delta0, study.delta1, study.n_segments,
                   seed=seed, segment_cap=study.segment_cap, t_warmup=study.t_warmup)
    except NumericalError as exc:
        return None, f"{type(exc).__name__}: {exc}"
    return est, ""


def run_fsle_study(instances, study: FsleStudyConfig):
    """Returns ``(rows, failures)``; one row per alpha, reduced in input order.

    Each row is ``(alpha, mean, std, n_runs, n_failed, n_truncated, n_converged)``
    where mean and std are over per-run mean rates.
    """
    jobs = []
    for a in study.alpha_list:
        dyn = DynamicsConfig(alpha=a, a_init=study.a_init, rtol=study.rtol, atol=study.atol)
        for i, inst in enumerate(instances):
            for j in range(study.n_seeds):
                jobs.append(delayed(_fsle_member)(inst, dyn, study,
                                                  derive_seed(study.master_seed, i, j)))
    results = Parallel(n_jobs=study.worker_count)(jobs)
    per = len(instances) * study.n_seeds
    rows, failures = [], []
    for ai, a in enumerate(study.alpha_list):
        chunk = results[ai * per:(ai + 1) * per]
        ests = [e for e, _ in chunk if e is not None]
        failures += [(a, err) for e, err in chunk if e is None]
        vals = np.array([e.lambda_mean for e in ests])
        rows.append((a, float(vals.mean()) if vals.size else float("nan"),
                     float(vals.std()) if vals.size else float("nan"), len(ests),
                     per - len(ests), sum(e.truncated for e in ests),
                     sum(e.converged for e in ests)))
    return rows, failures


def write_fsle_study(path, rows, study: FsleStudyConfig, instances):
    meta = {"tool": "ugdyn", "version": __version__, "kind": "fsle_vs_alpha",
            "protocol": "threshold_crossing", "separation": "L2_spins",
            "instance_hashes": ",".join(i.content_hash() for i in instances)}
    for key, val in dataclasses.asdict(study).items():
        if key != "worker_count":
            meta[f"config.{key}"] = _plain(val)
    return write_table(path, ["alpha", "fsle_mean", "fsle_std", "n_runs", "n_failed",
                              "n_truncated", "n_converged"], rows, meta)
