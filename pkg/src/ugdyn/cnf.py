"""One-hot CNF encoding of 2-Lin-k instances over spin variables.

Spin layout (0-based): variable ``x_i`` owns spins ``k*i .. k*i + k-1`` and the
witness block of equation ``q`` owns ``k*n_x + k*q .. k*n_x + k*q + k-1``.
Spin ``+1`` is true, ``-1`` false.

Clause order is fixed so that the literal matrix, and therefore the dynamics,
are reproducible:

1. per ``x_i`` (ascending), the pairwise at-most-one clauses
   ``(~s_a | ~s_b)`` for ``a < b`` (the at-least-one clause is redundant and
   omitted);
2. per equation ``q``, the length-``k`` clause over its witness block,
   followed for ``t = 0..k-1`` by ``(~z_t | x_i=t)`` and
   ``(~z_t | x_j=(t-b) mod k)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import InvalidInputError, ParseError
from .instance import TwoLinInstance, check_assignment, equation_satisfied


@dataclass(frozen=True)
class Clause:
    literals: tuple  # of (spin index, polarity in {+1, -1})

    def __len__(self):
        return len(self.literals)


@dataclass(frozen=True, eq=False)
class CnfFormula:
    """Encoded formula with dense padded literal arrays.

    ``lit_var[m, r]`` and ``lit_sign[m, r]`` hold the ``r``-th literal of
    clause ``m``; padding slots have sign 0 and point at spin 0, so the factor
    ``1 - sign * s`` they contribute is exactly 1.
    """

    k: int
    n_x: int
    n_eq: int
    clauses: tuple
    equations: np.ndarray = field(repr=False)
    lit_var: np.ndarray = field(init=False, repr=False)
    lit_sign: np.ndarray = field(init=False, repr=False)
    clause_len: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        M = len(self.clauses)
        width = max(len(c) for c in self.clauses)
        var = np.zeros((M, width), dtype=np.int64)
        sign = np.zeros((M, width), dtype=np.float64)
        for m, clause in enumerate(self.clauses):
            for r, (p, pol) in enumerate(clause.literals):
                var[m, r] = p
                sign[m, r] = pol
        lengths = np.array([len(c) for c in self.clauses], dtype=np.int64)
        for name, arr in (("lit_var", var), ("lit_sign", sign), ("clause_len", lengths)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def N(self) -> int:
        return (self.n_x + self.n_eq) * self.k

    @property
    def M(self) -> int:
        return len(self.clauses)

    @property
    def n_x_spins(self) -> int:
        return self.n_x * self.k

    def x_block(self, i):
        return slice(self.k * i, self.k * (i + 1))

    def z_block(self, q):
        base = self.k * self.n_x
        return slice(base + self.k * q, base + self.k * (q + 1))

    def equation_clauses(self, q) -> range:
        """Indices of the ``1 + 2k`` clauses derived from equation ``q``."""
        start = self.n_x * self.k * (self.k - 1) // 2 + q * (1 + 2 * self.k)
        return range(start, start + 1 + 2 * self.k)

    def or_clause(self, q) -> int:
        return self.equation_clauses(q)[0]

    def incidence(self):
        """Variable-to-clause adjacency as CSR ``(indptr, clause_index)``."""
        mask = self.lit_sign != 0
        rows = np.broadcast_to(np.arange(self.M)[:, None], mask.shape)[mask]
        cols = self.lit_var[mask]
        order = np.argsort(cols, kind="stable")
        indptr = np.zeros(self.N + 1, dtype=np.int64)
        np.add.at(indptr, cols + 1, 1)
        return np.cumsum(indptr), rows[order]


def expected_counts(n_x, n_eq, k):
    """Closed forms ``(N, M)`` for the encoding."""
    return (n_x + n_eq) * k, n_x * k * (k - 1) // 2 + n_eq * (1 + 2 * k)


def encode(instance: TwoLinInstance) -> CnfFormula:
    k, n_x = instance.k, instance.n_x
    clauses = []
    for i in range(n_x):
        base = k * i
        for a in range(k):
            for b in range(a + 1, k):
                clauses.append(Clause(((base + a, -1), (base + b, -1))))
    zbase = k * n_x
    for q, (i, j, b) in enumerate(instance.eq_array.tolist()):
        z = zbase + k * q
        clauses.append(Clause(tuple((z + t, 1) for t in range(k))))
        for t in range(k):
            clauses.append(Clause(((z + t, -1), (k * i + t, 1))))
            clauses.append(Clause(((z + t, -1), (k * j + (t - b) % k, 1))))
    eqs = instance.eq_array.copy()
    eqs.setflags(write=False)
    return CnfFormula(k, n_x, instance.n_eq, tuple(clauses), eqs)


def encode_assignment(formula: CnfFormula, assignment, instance=None) -> np.ndarray:
    """Spin corner of an assignment with its canonical witness completion.

    Satisfied equations get a one-hot witness at branch ``values[i]``; violated
    ones keep an all ``-1`` block, so only their length-``k`` clause fails.
    """
    if instance is None:
        instance = TwoLinInstance(formula.k, formula.n_x, formula.equations)
    x = check_assignment(instance, assignment)
    k = formula.k
    s = -np.ones(formula.N)
    s[k * np.arange(formula.n_x) + x] = 1.0
    sat = equation_satisfied(instance, x)
    q = np.flatnonzero(sat)
    s[k * formula.n_x + k * q + x[formula.equations[q, 0]]] = 1.0
    return s


def decode_assignment(s, formula: CnfFormula) -> np.ndarray:
    """Argmax per x-block; ties go to the smallest index. Accepts a batch of rows."""
    s = np.asarray(s, dtype=float)
    xs = s[..., : formula.n_x_spins]
    return np.argmax(xs.reshape(*xs.shape[:-1], formula.n_x, formula.k), axis=-1)


def clause_satisfied(formula: CnfFormula, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.shape != (formula.N,):
        raise InvalidInputError(f"spin vector has shape {s.shape}, expected ({formula.N},)")
    if not np.all(np.abs(s) == 1.0):
        raise InvalidInputError("clause counting needs a corner of {-1, +1}^N")
    hit = formula.lit_sign * s[formula.lit_var] == 1.0
    return hit.any(axis=1)


def count_satisfied_clauses(formula: CnfFormula, s) -> int:
    return int(clause_satisfied(formula, s).sum())


def format_dimacs(formula: CnfFormula, comments=()) -> str:
    lines = [f"c {c}" for c in comments]
    lines.append(f"p cnf {formula.N} {formula.M}")
    for clause in formula.clauses:
        lits = " ".join(str(pol * (p + 1)) for p, pol in clause.literals)
        lines.append(f"{lits} 0")
    return "\n".join(lines) + "\n"


def write_dimacs(formula: CnfFormula, path, comments=()):
    Path(path).write_text(format_dimacs(formula, comments))


def read_dimacs(path):
    """Parse a DIMACS CNF file into ``(n_vars, clauses)`` with signed 1-based literals."""
    n_vars = n_clauses = None
    clauses, current = [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "c%":
            continue
        if line.startswith("p"):
            tok = line.split()
            if len(tok) != 4 or tok[1] != "cnf":
                raise ParseError(f"malformed header {line!r}", lineno, path)
            n_vars, n_clauses = int(tok[2]), int(tok[3])
            continue
        if n_vars is None:
            raise ParseError("clause before header", lineno, path)
        for tok in line.split():
            lit = int(tok)
            if lit == 0:
                clauses.append(tuple(current))
                current = []
            elif abs(lit) > n_vars:
                raise ParseError(f"literal {lit} exceeds {n_vars} variables", lineno, path)
            else:
                current.append(lit)
    if n_vars is None:
        raise ParseError("missing 'p cnf' header", None, path)
    if current:
        clauses.append(tuple(current))
    if len(clauses) != n_clauses:
        raise ParseError(f"header declares {n_clauses} clauses, found {len(clauses)}",
                         None, path)
    return n_vars, clauses
