"""Master problem: best convex combination of the collected aggregate bids.

    minimize   a * ||sum_k w_k d_k||^2 - sum_k w_k b_k
    subject to w >= 0, sum(w) = 1

Solved by a primal active-set method started from the previous round's
weights. If that does not certify, accelerated projected gradient with
restarts runs from the same point and its iterate is polished the same way.
Every answer is checked against the KKT residual bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from dwmarket.core import Bid, DomainError, SolverError, hourly
from dwmarket.supply import SupplyModel, generation_cost, marginal_prices

KKT_TOL = 1e-7
PG_TOL = 1e-8
MAX_INNER = 10_000
DUPLICATE_TOL = 1e-9


@dataclass
class ExtremePointSet:
    """Aggregate bids in arrival order."""

    bids: list = field(default_factory=list)

    def __len__(self):
        return len(self.bids)

    @property
    def horizon(self) -> int:
        return self.bids[0].horizon

    def matrix(self) -> np.ndarray:
        """H x K matrix of demand columns."""
        return np.column_stack([b.demand for b in self.bids])

    def benefits(self) -> np.ndarray:
        return np.array([b.benefit for b in self.bids])

    def find(self, bid: Bid, tol: float = DUPLICATE_TOL) -> int | None:
        """Index of an existing point within ``tol`` (L-inf, demand and benefit) of ``bid``."""
        for k, old in enumerate(self.bids):
            if np.max(np.abs(old.demand - bid.demand), initial=0.0) <= tol \
                    and abs(old.benefit - bid.benefit) <= tol:
                return k
        return None

    def append(self, bid: Bid) -> bool:
        """Add ``bid`` unless it duplicates an existing point; report whether it was added."""
        if self.bids and bid.horizon != self.horizon:
            raise DomainError(f"bid horizon {bid.horizon} != {self.horizon}")
        if self.find(bid) is not None:
            return False
        self.bids.append(bid)
        return True


@dataclass(frozen=True, eq=False)
class MasterSolution:
    weights: np.ndarray
    constructed_demand: np.ndarray
    prices: np.ndarray
    objective: float  # S_known = C(D) - B'(D)
    b_prime: float
    kkt_residual: float = 0.0


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {w >= 0, sum w = 1} (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / ind > 0)[-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


class _Objective:
    def __init__(self, Dm: np.ndarray, b: np.ndarray, a: float):
        self.Dm = Dm
        self.b = b
        self.a = a

    def value(self, w):
        D = self.Dm @ w
        return self.a * float(D @ D) - float(self.b @ w)

    def grad(self, w):
        return 2.0 * self.a * (self.Dm.T @ (self.Dm @ w)) - self.b


def kkt_residual(w: np.ndarray, g: np.ndarray) -> float:
    """Fixed-point residual ``||w - P(w - g)||_inf`` of projected gradient."""
    return float(np.max(np.abs(w - project_simplex(w - g))))


def _certified(f: _Objective, w) -> bool:
    return w is not None and kkt_residual(w, f.grad(w)) <= KKT_TOL * (1.0 + abs(f.value(w)))


def _projected_gradient(f: _Objective, w0: np.ndarray, L: float, polish_every: int = 100):
    """Accelerated projected gradient; every ``polish_every`` steps, try to finish exactly.

    Returns ``(w, iterations, polished)`` where ``polished`` is a verified
    support-polish result or None.
    """
    w = w0.copy()
    y = w.copy()
    t = 1.0
    fw = f.value(w)
    for it in range(MAX_INNER):
        w_next = project_simplex(y - f.grad(y) / L)
        f_next = f.value(w_next)
        if f_next > fw:
            # function-value restart: drop momentum and take a plain step
            y = w.copy()
            t = 1.0
            w_next = project_simplex(w - f.grad(w) / L)
            f_next = f.value(w_next)
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = w_next + ((t - 1.0) / t_next) * (w_next - w)
        w, fw, t = w_next, f_next, t_next
        pg = L * float(np.linalg.norm(w - project_simplex(w - f.grad(w) / L)))
        if pg <= PG_TOL * (1.0 + abs(fw)):
            return w, it + 1, None
        if (it + 1) % polish_every == 0:
            polished = _support_polish(f, w)
            if _certified(f, polished) and f.value(polished) <= fw:
                return w, it + 1, polished
    return w, MAX_INNER, None


def _face_step(Q: np.ndarray, g: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Step toward the minimizer of the quadratic model on the face ``sum p = 0``.

    Solves ``Q p - lam 1 = -g, sum p = 0`` by pseudo-inverse, treating
    singular values below ``rtol`` (relative) as zero. When the face has no
    finite minimizer the objective is linear along some face direction; the
    steepest such direction is returned instead, at unit length.
    """
    n = g.size
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = Q
    M[:n, n] = -1.0
    M[n, :n] = 1.0
    rhs = np.concatenate([-g, [0.0]])
    U, sv, Vt = np.linalg.svd(M)
    keep = sv > rtol * sv[0]
    coef = U.T @ rhs
    sol = Vt[keep].T @ (coef[keep] / sv[keep])
    if np.max(np.abs(M @ sol - rhs)) <= 1e-9 * (1.0 + np.max(np.abs(rhs))):
        return sol[:n]
    # null space of [Q; 1^T]: face directions along which the objective is linear
    A = np.vstack([Q, np.ones((1, n))])
    _, sa, vt = np.linalg.svd(A)
    rank = int(np.sum(sa > rtol * max(1.0, sa[0])))
    N = vt[rank:].T
    p = -N @ (N.T @ g)
    norm = float(np.linalg.norm(p))
    return p / norm if norm > 0 else np.zeros(n)


def _support_polish(f: _Objective, w: np.ndarray, max_rounds: int = 500):
    """Primal active-set method on the simplex, started from feasible ``w``.

    Each round minimizes the model on the face spanned by the current
    support, moves as far as feasibility allows, and drops weights that hit
    zero; at a face minimizer the most attractive outside column is added.
    Returns the final weights, or None if the rounds run out.
    """
    Q = 2.0 * f.a * (f.Dm.T @ f.Dm)
    w = np.maximum(np.asarray(w, dtype=float), 0.0)
    w /= w.sum()
    scale = 1.0 + float(np.max(np.abs(f.b), initial=0.0)) + float(np.max(np.abs(Q), initial=0.0))
    for _ in range(max_rounds):
        S = np.flatnonzero(w > 0)
        g = f.grad(w)
        p = _face_step(Q[np.ix_(S, S)], g[S])
        if np.max(np.abs(p), initial=0.0) <= 1e-13 or float(g[S] @ p) >= -1e-15 * scale:
            lam = float(np.mean(g[S]))
            outside = np.flatnonzero(w == 0)
            if outside.size == 0:
                return w
            j = outside[np.argmin(g[outside])]
            if g[j] >= lam - 1e-12 * scale:
                return w
            # enter column j: move a little weight onto it along the face
            d = np.zeros(w.size)
            d[S] = -w[S]
            d[j] = 1.0
            # exact line search on the quadratic along d
            curv = float(d @ Q @ d)
            slope = float(g @ d)
            alpha = 1.0 if curv <= 0 else min(1.0, -slope / curv)
            w = w + alpha * d
            w[np.abs(w) <= 1e-16] = 0.0
            w = np.maximum(w, 0.0)
            w /= w.sum()
            continue
        neg = p < 0
        ratios = -w[S][neg] / p[neg]
        alpha = float(np.min(ratios)) if ratios.size else np.inf
        full = alpha >= 1.0
        alpha = min(alpha, 1.0)
        step = np.zeros(w.size)
        step[S] = p
        w = w + alpha * step
        if not full:
            hit = S[neg][np.argmin(ratios)]
            w[hit] = 0.0
        w[w < 1e-15] = 0.0
        w /= w.sum()
    return None


def _mix(bids: list, w: np.ndarray) -> np.ndarray:
    """sum_k w_k d_k, summed in arrival order."""
    D = np.zeros(bids[0].horizon)
    for wk, bid in zip(w, bids):
        if wk != 0.0:
            D += wk * bid.demand
    return np.maximum(D, 0.0)


def solution_from_weights(points: ExtremePointSet, supply: SupplyModel, w) -> MasterSolution:
    w = np.asarray(w, dtype=float)
    D = _mix(points.bids, w)
    b_prime = math.fsum(w * points.benefits())
    f = _Objective(points.matrix(), points.benefits(), supply.a)
    return MasterSolution(
        weights=w,
        constructed_demand=hourly(D),
        prices=marginal_prices(D, supply),
        objective=generation_cost(D, supply) - b_prime,
        b_prime=b_prime,
        kkt_residual=kkt_residual(w, f.grad(w)),
    )


def solve_master(points: ExtremePointSet, supply: SupplyModel, warm_start=None) -> MasterSolution:
    """Optimal weights over ``points``; never worse than ``warm_start`` (padded with zeros)."""
    K = len(points)
    if K == 0:
        raise DomainError("master problem needs at least one bid")
    if K == 1:
        return solution_from_weights(points, supply, np.ones(1))

    Dm = points.matrix()
    f = _Objective(Dm, points.benefits(), supply.a)
    L = max(2.0 * supply.a * float(np.sum(Dm * Dm)), 1e-12)

    w0 = np.full(K, 1.0 / K)
    if warm_start is not None:
        w0 = np.zeros(K)
        w0[:len(warm_start)] = warm_start
    # active-set iterations from the previous optimum; new columns enter as needed
    candidates = [w0, _support_polish(f, w0)]
    if not _certified(f, candidates[-1]):
        w_pg, _, polished = _projected_gradient(f, w0, L)
        candidates += [w_pg, polished if polished is not None else _support_polish(f, w_pg)]

    # lowest objective among certified candidates; the start point is a fallback only
    pool = [w for w in candidates if _certified(f, w)] or [w for w in candidates if w is not None]
    best = min(pool, key=lambda w: (f.value(w), kkt_residual(w, f.grad(w))))
    sol = solution_from_weights(points, supply, best)
    if sol.kkt_residual > KKT_TOL * (1.0 + abs(sol.objective)):
        raise SolverError("master problem did not converge", residual=sol.kkt_residual,
                          objective=sol.objective)
    return sol


def optimality_gap(new_bid: Bid, prior: MasterSolution) -> float:
    """(b_k - p.d_k) - (B' - p.D): how much better the new bid is than the current mix at p."""
    p = prior.prices
    if new_bid.horizon != len(p):
        raise DomainError(f"bid horizon {new_bid.horizon} != price horizon {len(p)}")
    return (new_bid.benefit - float(p @ new_bid.demand)) \
        - (prior.b_prime - float(p @ prior.constructed_demand))


def lower_bound(new_bid: Bid, prior: MasterSolution) -> float:
    """S_best = S_known - gap, a lower bound on the joint optimum."""
    return prior.objective - optimality_gap(new_bid, prior)
