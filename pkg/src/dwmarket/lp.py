"""Dense two-phase primal simplex.

Small LPs only (a few hundred columns at most). Variables may carry any
combination of finite/infinite lower and upper bounds; they are shifted,
reflected or split into nonnegative parts before the tableau is built.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from dwmarket.core import DomainError, SolverError

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-7
MAX_PIVOTS = 50_000

LE, EQ, GE = "<=", "=", ">="
_RELATIONS = (LE, EQ, GE)


@dataclass
class LinearProgram:
    """minimize ``c @ x`` s.t. ``A[i] @ x  rel[i]  b[i]`` and ``lb <= x <= ub``."""

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    relations: Sequence[str]
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.shape[0]
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n) if n else np.zeros((len(self.b), 0))
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.relations = tuple(self.relations)
        m = self.A.shape[0]
        if self.b.shape[0] != m or len(self.relations) != m:
            raise DomainError(f"LP rows disagree: A has {m}, b has {self.b.shape[0]}, "
                              f"relations has {len(self.relations)}")
        bad = [r for r in self.relations if r not in _RELATIONS]
        if bad:
            raise DomainError(f"unknown relation(s) {bad}")
        self.lb = np.zeros(n) if self.lb is None else np.asarray(self.lb, dtype=float).reshape(-1)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).reshape(-1)
        if self.lb.shape[0] != n or self.ub.shape[0] != n:
            raise DomainError("bound vectors must have one entry per variable")
        for name, arr in (("c", self.c), ("A", self.A), ("b", self.b)):
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"LP {name} has non-finite coefficients")
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)) or np.any(self.lb == np.inf) \
                or np.any(self.ub == -np.inf):
            raise DomainError("invalid variable bounds")

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def violation(self, x: np.ndarray) -> float:
        """Largest constraint or bound violation of ``x`` (0 when feasible)."""
        worst = 0.0
        if self.n:
            worst = max(worst, float(np.max(self.lb - x, initial=0.0)),
                        float(np.max(x - self.ub, initial=0.0)))
        ax = self.A @ x
        for i, rel in enumerate(self.relations):
            r = ax[i] - self.b[i]
            if rel == LE:
                worst = max(worst, r)
            elif rel == GE:
                worst = max(worst, -r)
            else:
                worst = max(worst, abs(r))
        return worst


@dataclass
class LpSolution:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None = None
    objective: float | None = None
    pivots: int = 0
    diagnostics: dict = field(default_factory=dict)


class _Tableau:
    """Row-reduced tableau ``T = [B^-1 A | B^-1 b]`` plus a cost row."""

    def __init__(self, A: np.ndarray, b: np.ndarray, basis: list[int]):
        m, ncol = A.shape
        self.T = np.zeros((m + 1, ncol + 1))
        self.T[:m, :ncol] = A
        self.T[:m, -1] = b
        self.basis = basis
        self.pivots = 0

    def set_cost(self, cost: np.ndarray):
        m = len(self.basis)
        self.T[m, :] = 0.0
        self.T[m, :len(cost)] = cost
        for i, j in enumerate(self.basis):
            if self.T[m, j] != 0.0:
                self.T[m, :] -= self.T[m, j] * self.T[i, :]

    def pivot(self, row: int, col: int):
        T = self.T
        T[row, :] /= T[row, col]
        colvals = T[:, col].copy()
        colvals[row] = 0.0
        T -= np.outer(colvals, T[row, :])
        T[:, col] = 0.0
        T[row, col] = 1.0
        self.basis[row] = col
        self.pivots += 1

    def run(self, allowed: np.ndarray) -> str:
        """Bland's rule on the columns flagged in ``allowed``."""
        m = len(self.basis)
        T = self.T
        while True:
            if self.pivots > MAX_PIVOTS:
                raise SolverError("simplex pivot limit reached", pivots=self.pivots)
            reduced = T[m, :-1]
            candidates = np.flatnonzero(allowed & (reduced < -PIVOT_TOL))
            if candidates.size == 0:
                return "optimal"
            col = int(candidates[0])
            column = T[:m, col]
            pos = column > PIVOT_TOL
            if not np.any(pos):
                return "unbounded"
            ratios = np.full(m, np.inf)
            ratios[pos] = T[:m, -1][pos] / column[pos]
            best = ratios.min()
            ties = np.flatnonzero(ratios <= best + PIVOT_TOL * max(1.0, abs(best)))
            row = int(min(ties, key=lambda r: self.basis[r]))
            self.pivot(row, col)


def _standardize(lp: LinearProgram):
    """Map x to y >= 0 with x = offset + M @ y; return equality-form data."""
    n = lp.n
    cols = []  # (original index, sign)
    offset = np.zeros(n)
    extra_rows = []  # (y column, upper bound)
    for j in range(n):
        lo, hi = lp.lb[j], lp.ub[j]
        if np.isfinite(lo):
            offset[j] = lo
            cols.append((j, 1.0))
            if np.isfinite(hi):
                extra_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            offset[j] = hi
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    ny = len(cols)
    M = np.zeros((n, ny))
    for k, (j, s) in enumerate(cols):
        M[j, k] = s

    A = lp.A @ M
    b = lp.b - lp.A @ offset
    rels = list(lp.relations)
    if extra_rows:
        ub_rows = np.zeros((len(extra_rows), ny))
        for r, (k, width) in enumerate(extra_rows):
            if width < -FEAS_TOL:
                return None
            ub_rows[r, k] = 1.0
        A = np.vstack([A, ub_rows])
        b = np.concatenate([b, [max(w, 0.0) for _, w in extra_rows]])
        rels += [LE] * len(extra_rows)
    c = M.T @ lp.c
    const = float(lp.c @ offset)
    return A, b, rels, c, const, M, offset


def solve_lp(lp: LinearProgram) -> LpSolution:
    std_form = _standardize(lp)
    if std_form is None:
        return LpSolution("infeasible", diagnostics={"reason": "lb > ub"})
    A, b, rels, c, const, M, offset = std_form
    m, ny = A.shape

    # rows with negative rhs are negated so the initial basis is feasible
    A = A.copy()
    b = b.copy()
    for i in range(m):
        if b[i] < 0:
            A[i] *= -1
            b[i] *= -1
            rels[i] = {LE: GE, GE: LE, EQ: EQ}[rels[i]]

    n_slack = sum(r != EQ for r in rels)
    n_art = sum(r != LE for r in rels)
    ncol = ny + n_slack + n_art
    full = np.zeros((m, ncol))
    full[:, :ny] = A
    basis = [-1] * m
    s = ny
    a = ny + n_slack
    art_cols = []
    for i, rel in enumerate(rels):
        if rel == LE:
            full[i, s] = 1.0
            basis[i] = s
            s += 1
        elif rel == GE:
            full[i, s] = -1.0
            s += 1
        if rel != LE:
            full[i, a] = 1.0
            basis[i] = a
            art_cols.append(a)
            a += 1

    tab = _Tableau(full, b, basis)
    allowed = np.ones(ncol, dtype=bool)

    if art_cols:
        phase1 = np.zeros(ncol)
        phase1[art_cols] = 1.0
        tab.set_cost(phase1)
        tab.run(allowed)
        infeas = -tab.T[m, -1]
        scale = 1.0 + float(np.max(np.abs(b), initial=0.0))
        if infeas > FEAS_TOL * scale:
            return LpSolution("infeasible", pivots=tab.pivots,
                              diagnostics={"phase1_objective": infeas})
        # drive remaining artificials out of the basis where possible
        is_art = np.zeros(ncol, dtype=bool)
        is_art[art_cols] = True
        for i in range(m):
            if is_art[tab.basis[i]]:
                row = tab.T[i, :ncol]
                cand = np.flatnonzero(~is_art & (np.abs(row) > PIVOT_TOL))
                if cand.size:
                    tab.pivot(i, int(cand[0]))
        allowed = ~is_art

    cost = np.zeros(ncol)
    cost[:ny] = c
    tab.set_cost(cost)
    status = tab.run(allowed)
    if status == "unbounded":
        return LpSolution("unbounded", pivots=tab.pivots)

    y = np.zeros(ncol)
    for i, j in enumerate(tab.basis):
        y[j] = tab.T[i, -1]
    x = offset + M @ y[:ny]
    # snap onto bounds that round-off pushed us across
    x = np.minimum(np.maximum(x, lp.lb), lp.ub)
    viol = lp.violation(x)
    if viol > FEAS_TOL * (1.0 + float(np.max(np.abs(lp.b), initial=0.0))):
        raise SolverError("simplex returned an infeasible point", violation=viol, pivots=tab.pivots)
    return LpSolution("optimal", x=x, objective=float(lp.c @ x), pivots=tab.pivots)
