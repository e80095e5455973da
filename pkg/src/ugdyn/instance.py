"""2-Lin-k systems: representation, polygon generator and a brute-force oracle.

An equation ``(i, j, b)`` reads ``x_i = x_j + b (mod k)``. Equations are stored
exactly as given; swapping ``i`` and ``j`` negates ``b`` so nothing is ever
canonicalized.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numba
import numpy as np

from .exceptions import CapacityError, InvalidInputError, ParseError

DEFAULT_ENUMERATION_BUDGET = 10**7
# Vertex-cut certification enumerates 2**(n_x - 1) cuts.
MAX_CUT_VARIABLES = 20

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TwoLinEquation:
    i: int
    j: int
    b: int

    def __post_init__(self):
        if self.i == self.j:
            raise InvalidInputError(f"equation relates x{self.i} to itself")
        if self.i < 0 or self.j < 0 or self.b < 0:
            raise InvalidInputError(f"negative field in equation {self}")


@dataclass(frozen=True)
class TwoLinInstance:
    """A system of two-variable linear equations over Z_k.

    Parameters
    ----------
    k : int
        Alphabet size, at least 2.
    n_x : int
        Number of variables, at least 2.
    equations : tuple of TwoLinEquation
        Ordered, non-empty. Every variable must appear at least once.
    designed_opt : Fraction, optional
        Maximum satisfiable fraction intended by the generator (``1 - eps``).
    reference : tuple of int, optional
        Generator's hidden assignment attaining ``designed_opt``. Not part of
        the file format and ignored by equality.
    certificate : str, optional
        How the generator proved ``designed_opt`` optimal (``"path"``,
        ``"cut"`` or ``"exact"``); None when unproven. Ignored by equality.
    """

    k: int
    n_x: int
    equations: tuple
    designed_opt: Fraction | None = None
    reference: tuple | None = field(default=None, compare=False, repr=False)
    certificate: str | None = field(default=None, compare=False, repr=False)
    _arr: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        eqs = tuple(
            e if isinstance(e, TwoLinEquation) else TwoLinEquation(*map(int, e))
            for e in self.equations
        )
        object.__setattr__(self, "equations", eqs)
        if int(self.k) < 2:
            raise InvalidInputError(f"k must be >= 2, got {self.k}")
        if int(self.n_x) < 2:
            raise InvalidInputError(f"n_x must be >= 2, got {self.n_x}")
        if not eqs:
            raise InvalidInputError("instance needs at least one equation")
        seen = np.zeros(self.n_x, dtype=bool)
        for e in eqs:
            if e.i >= self.n_x or e.j >= self.n_x:
                raise InvalidInputError(f"variable index out of range in {e}")
            if e.b >= self.k:
                raise InvalidInputError(f"b={e.b} not a residue mod {self.k}")
            seen[e.i] = seen[e.j] = True
        if not seen.all():
            missing = np.flatnonzero(~seen).tolist()
            raise InvalidInputError(f"variables {missing} appear in no equation")
        if self.designed_opt is not None:
            opt = Fraction(self.designed_opt)
            if opt <= 0 or opt > 1 or (opt * len(eqs)).denominator != 1:
                raise InvalidInputError(
                    f"designed_opt={opt} is not m/{len(eqs)} with 0 < m <= {len(eqs)}"
                )
            object.__setattr__(self, "designed_opt", opt)
        if self.reference is not None:
            object.__setattr__(self, "reference", tuple(int(v) for v in self.reference))
        arr = np.array([(e.i, e.j, e.b) for e in eqs], dtype=np.int64)
        arr.setflags(write=False)
        object.__setattr__(self, "_arr", arr)

    @property
    def n_eq(self) -> int:
        return len(self.equations)

    @property
    def eq_array(self) -> np.ndarray:
        """Read-only ``(n_eq, 3)`` integer array of ``(i, j, b)`` rows."""
        return self._arr

    @property
    def epsilon(self) -> Fraction | None:
        return None if self.designed_opt is None else 1 - self.designed_opt

    def content_hash(self) -> str:
        """Short sha256 digest of the canonical text serialization."""
        return hashlib.sha256(format_instance(self).encode()).hexdigest()[:16]


def check_assignment(instance: TwoLinInstance, assignment) -> np.ndarray:
    values = np.asarray(assignment)
    if values.shape != (instance.n_x,):
        raise InvalidInputError(
            f"assignment has shape {values.shape}, expected ({instance.n_x},)"
        )
    if not np.issubdtype(values.dtype, np.integer):
        if not np.all(np.equal(np.mod(values, 1), 0)):
            raise InvalidInputError("assignment entries must be integers")
        values = values.astype(np.int64)
    if values.min() < 0 or values.max() >= instance.k:
        raise InvalidInputError(f"assignment entries must lie in [0, {instance.k})")
    return values.astype(np.int64, copy=False)


def equation_satisfied(instance: TwoLinInstance, assignment) -> np.ndarray:
    """Boolean mask over equations satisfied by ``assignment``."""
    x = check_assignment(instance, assignment)
    eq = instance.eq_array
    return x[eq[:, 0]] == (x[eq[:, 1]] + eq[:, 2]) % instance.k


def satisfied_count(instance: TwoLinInstance, assignment) -> int:
    """Number of equations ``x_i = x_j + b (mod k)`` satisfied by ``assignment``."""
    return int(equation_satisfied(instance, assignment).sum())


def satisfied_counts(instance: TwoLinInstance, assignments) -> np.ndarray:
    """Vectorized :func:`satisfied_count` over the rows of ``assignments``."""
    x = np.asarray(assignments, dtype=np.int64)
    eq = instance.eq_array
    ok = x[:, eq[:, 0]] == (x[:, eq[:, 1]] + eq[:, 2]) % instance.k
    return ok.sum(axis=1)


def brute_force_optimum(instance: TwoLinInstance, budget=DEFAULT_ENUMERATION_BUDGET,
                        chunk=1 << 16):
    """Exhaustively maximize the satisfied count.

    Enumeration runs in lexicographic order and keeps the first maximizer, so
    ties resolve to the lexicographically smallest assignment.

    Returns
    -------
    assignment : ndarray of int
    fraction : Fraction
    """
    k, n = instance.k, instance.n_x
    total = k**n
    if total > budget:
        raise CapacityError(f"k**n_x = {k}**{n} = {total} assignments", budget)
    best_count, best = -1, None
    weights = k ** np.arange(n - 1, -1, -1, dtype=np.int64)
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total), dtype=np.int64)
        block = (codes[:, None] // weights) % k
        counts = satisfied_counts(instance, block)
        pos = int(np.argmax(counts))
        if counts[pos] > best_count:
            best_count, best = int(counts[pos]), block[pos].copy()
            if best_count == instance.n_eq:
                break
    return best, Fraction(best_count, instance.n_eq)


def _max_polygon_unsat(n_x):
    return n_x * (n_x - 1) // 2 - n_x + 1


def _cut_certified(n_x, edges, unsat_mask):
    """True when every vertex cut crosses at least as many sat as unsat edges.

    Under that condition no assignment can beat the hidden reference: moving
    away from it only satisfies unsat equations whose endpoints land in
    different value classes, and each such cut costs at least as many sat
    equations. The check is sufficient for every alphabet size.
    """
    if n_x > MAX_CUT_VARIABLES:
        return False
    masks = np.arange(1 << (n_x - 1), dtype=np.int64) << 1  # vertex 0 never in cut
    balance = np.zeros(masks.size, dtype=np.int32)
    for (i, j), bad in zip(edges, unsat_mask):
        crossing = ((masks >> i) ^ (masks >> j)) & 1
        balance += np.where(bad, -crossing, crossing).astype(np.int32)
    return bool(balance.min() >= 0)


@numba.njit(cache=True)
def _max_satisfied_anchored(k, n_x, eq):
    # Global shifts preserve every equation, so x_0 = 0 loses nothing.
    x = np.zeros(n_x, dtype=np.int64)
    best = -1
    n_eq = eq.shape[0]
    while True:
        c = 0
        for q in range(n_eq):
            if x[eq[q, 0]] == (x[eq[q, 1]] + eq[q, 2]) % k:
                c += 1
        if c > best:
            best = c
            if best == n_eq:
                return best
        p = n_x - 1
        while p > 0 and x[p] == k - 1:
            x[p] = 0
            p -= 1
        if p == 0:
            return best
        x[p] += 1


def max_satisfied(instance: TwoLinInstance) -> int:
    """Exact maximum satisfied count by enumerating ``k**(n_x-1)`` anchored assignments."""
    return int(_max_satisfied_anchored(instance.k, instance.n_x,
                                       np.ascontiguousarray(instance.eq_array)))


def default_polygon_n_eq(n_x, target_unsat):
    return min(n_x * (n_x - 1) // 2, max(n_x, n_x - 1 + 2 * target_unsat))


def generate_polygon_instance(n_x: int, k: int, target_unsat: int, seed=None,
                              n_eq: int | None = None, *,
                              budget=DEFAULT_ENUMERATION_BUDGET,
                              max_moves: int = 20000):
    """Build a 2-Lin-k instance whose best assignment violates ``target_unsat`` equations.

    The variables sit on a polygon. The path edges ``(x_i, x_{i+1})`` always
    agree with a hidden random assignment. The closing edge ``(x_0, x_{n-1})``
    and randomly drawn diagonals may carry the unsat designation, in which
    case ``b`` takes one of the ``k - 1`` residues inconsistent with the hidden
    assignment.

    A random design does not in general have the hidden assignment as its
    optimum, so the design is certified before it is returned:

    * ``"path"``: at most one unsat equation, covered by the sat path.
    * ``"cut"``: every vertex cut crosses at least as many sat as unsat
      equations.
    * ``"exact"``: exhaustive anchored enumeration confirms the optimum. When
      it does not, a seeded local search re-draws diagonals, designations and
      unsat offsets until it does.

    If ``k**(n_x-1)`` exceeds ``budget`` and the cut test fails, the design is
    returned uncertified (``certificate=None``) and ``designed_opt`` is trusted
    metadata.

    Parameters
    ----------
    n_x : int
        Number of variables, at least 3.
    k : int
        Alphabet size, at least 2.
    target_unsat : int
        Number of equations violated by the best assignment.
    seed : int or numpy Generator, optional
    n_eq : int, optional
        Total equation count. Defaults to
        ``min(n_x(n_x-1)/2, max(n_x, n_x - 1 + 2 * target_unsat))``.
    budget : int
        Largest anchored enumeration used for exact certification.
    max_moves : int
        Local-search moves before the geometry is declared infeasible.

    Returns
    -------
    TwoLinInstance
        ``designed_opt = (n_eq - target_unsat) / n_eq``; the hidden assignment
        is ``instance.reference`` and the certificate kind ``instance.certificate``.
    """
    n_x, k, target_unsat = int(n_x), int(k), int(target_unsat)
    if n_x < 3:
        raise InvalidInputError(f"polygon needs n_x >= 3, got {n_x}")
    if k < 2:
        raise InvalidInputError(f"k must be >= 2, got {k}")
    max_u = _max_polygon_unsat(n_x)
    if not 0 <= target_unsat <= max_u:
        raise InvalidInputError(
            f"target_unsat={target_unsat} outside [0, {max_u}] for n_x={n_x}"
        )
    n_pairs = n_x * (n_x - 1) // 2
    if n_eq is None:
        n_eq = default_polygon_n_eq(n_x, target_unsat)
    n_eq = int(n_eq)
    if not n_x <= n_eq <= n_pairs:
        raise InvalidInputError(f"n_eq={n_eq} outside [{n_x}, {n_pairs}]")
    n_eligible = n_eq - (n_x - 1)
    if n_eligible < target_unsat:
        raise InvalidInputError(
            f"only {n_eligible} eligible equations for target_unsat={target_unsat}"
        )

    rng = np.random.default_rng(seed)
    hidden = rng.integers(0, k, size=n_x)
    path = [(i, i + 1) for i in range(n_x - 1)]
    closing = (0, n_x - 1)
    diagonals = [(i, j) for i in range(n_x) for j in range(i + 2, n_x)
                 if (i, j) != closing]
    order = rng.permutation(len(diagonals))
    chosen = list(order[: n_eq - n_x])
    spare = list(order[n_eq - n_x:])
    unsat = np.zeros(n_eq, dtype=bool)
    unsat[n_x - 1 + rng.choice(n_eligible, size=target_unsat, replace=False)] = True
    offsets = rng.integers(1, k, size=n_eq) if k > 2 else np.ones(n_eq, dtype=np.int64)

    def build(chosen, unsat, offsets):
        edges = path + [closing] + [diagonals[d] for d in chosen]
        eq = np.empty((n_eq, 3), dtype=np.int64)
        for q, (i, j) in enumerate(edges):
            b = int(hidden[i] - hidden[j]) % k
            if unsat[q]:
                b = (b + int(offsets[q])) % k
            eq[q] = (i, j, b)
        return edges, eq

    edges, eq = build(chosen, unsat, offsets)
    target = n_eq - target_unsat
    if target_unsat <= 1:
        certificate = "path"
    elif _cut_certified(n_x, edges, unsat):
        certificate = "cut"
    elif k ** (n_x - 1) <= budget:
        certificate = "exact"
        excess = _max_satisfied_anchored(k, n_x, eq) - target
        eligible = np.arange(n_x - 1, n_eq)
        moves = 0
        while excess > 0:
            if moves >= max_moves:
                raise InvalidInputError(
                    f"no design with optimum {target}/{n_eq} found for n_x={n_x}, "
                    f"k={k} after {max_moves} local-search moves"
                )
            moves += 1
            c, u, o, s = list(chosen), unsat.copy(), offsets.copy(), list(spare)
            move = int(rng.integers(3))
            if move == 0 and s:
                a, b = int(rng.integers(len(c))), int(rng.integers(len(s)))
                c[a], s[b] = s[b], c[a]
            elif move == 1 and 0 < target_unsat < n_eligible:
                on = eligible[u[n_x - 1:]]
                off = eligible[~u[n_x - 1:]]
                u[rng.choice(on)] = False
                u[rng.choice(off)] = True
            elif k > 2:
                o[int(rng.integers(n_eq))] = rng.integers(1, k)
            else:
                continue
            cand_edges, cand_eq = build(c, u, o)
            cand = _max_satisfied_anchored(k, n_x, cand_eq) - target
            if cand <= excess:
                chosen, unsat, offsets, spare = c, u, o, s
                edges, eq, excess = cand_edges, cand_eq, cand
    else:
        certificate = None
        log.warning("n_x=%d, k=%d: designed optimum %d/%d left uncertified",
                    n_x, k, target, n_eq)

    return TwoLinInstance(k, n_x, tuple(map(tuple, eq.tolist())),
                          Fraction(target, n_eq), reference=hidden,
                          certificate=certificate)


def format_instance(instance: TwoLinInstance) -> str:
    lines = [f"p 2link {instance.k} {instance.n_x} {instance.n_eq}"]
    lines += [f"e {e.i} {e.j} {e.b}" for e in instance.equations]
    if instance.designed_opt is not None:
        opt = instance.designed_opt
        lines.append(f"c opt {opt.numerator}/{opt.denominator}")
    return "\n".join(lines) + "\n"


def write_instance(instance: TwoLinInstance, path):
    Path(path).write_text(format_instance(instance))


def parse_instance(text: str, path=None) -> TwoLinInstance:
    header = None
    equations = []
    opt = None
    last = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        last = lineno
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] == "p":
            if header is not None:
                raise ParseError("duplicate header", lineno, path)
            if len(tok) != 5 or tok[1] != "2link":
                raise ParseError(f"malformed header {line!r}", lineno, path)
            try:
                header = tuple(int(t) for t in tok[2:])
            except ValueError:
                raise ParseError(f"non-integer header field in {line!r}", lineno, path)
        elif tok[0] == "e":
            if header is None:
                raise ParseError("equation before header", lineno, path)
            if len(tok) != 4:
                raise ParseError(f"malformed equation {line!r}", lineno, path)
            try:
                i, j, b = (int(t) for t in tok[1:])
            except ValueError:
                raise ParseError(f"non-integer field in {line!r}", lineno, path)
            k, n_x, _ = header
            if i == j:
                raise ParseError(f"equation relates x{i} to itself", lineno, path)
            if not (0 <= i < n_x and 0 <= j < n_x):
                raise ParseError(f"variable index out of range in {line!r}", lineno, path)
            if not 0 <= b < k:
                raise ParseError(f"b={b} not a residue mod {k}", lineno, path)
            equations.append((i, j, b))
        elif tok[0] == "c":
            if len(tok) >= 2 and tok[1] == "opt":
                if len(tok) != 3:
                    raise ParseError(f"malformed opt trailer {line!r}", lineno, path)
                try:
                    opt = Fraction(tok[2])
                except (ValueError, ZeroDivisionError):
                    raise ParseError(f"bad fraction {tok[2]!r}", lineno, path)
        else:
            raise ParseError(f"unknown record type {tok[0]!r}", lineno, path)
    if header is None:
        raise ParseError("missing 'p 2link' header", None, path)
    k, n_x, n_eq = header
    if len(equations) != n_eq:
        raise ParseError(
            f"header declares {n_eq} equations but {len(equations)} were given",
            last, path,
        )
    try:
        return TwoLinInstance(k, n_x, tuple(equations), opt)
    except InvalidInputError as exc:
        raise ParseError(str(exc), None, path) from exc


def read_instance(path) -> TwoLinInstance:
    return parse_instance(Path(path).read_text(), path=path)

