"""Earth Mover's Distance between feature distributions.

Two solvers share one result type:

* :func:`emd_exact` solves the balanced transportation LP with successive
  shortest paths (Dijkstra on reduced costs, Johnson potentials).
* :func:`emd_sinkhorn` solves the entropy-regularised problem by alternating
  marginal scaling, switching to log-domain updates for small ``epsilon``.

The domain gap between two :class:`~surggap.features.FeatureSet` objects is
the EMD between their (optionally subsampled) snippet distributions under
the Euclidean ground metric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import Degenerate, DimMismatch, EmptySet, InvalidArgument, NumericalUnderflow, SolverError
from .features import FeatureSet

WEIGHT_TOL = 1e-12
REDUCED_COST_TOL = 1e-12
LOG_DOMAIN_RATIO = 500.0


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise InvalidArgument(f"points must be an M x d matrix, got shape {pts.shape}")
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (pts.shape[0],):
            raise InvalidArgument(f"{pts.shape[0]} points but {w.size} weights")
        if not np.all(np.isfinite(pts)):
            raise InvalidArgument("point coordinates must be finite")
        if np.any(w <= 0) or (w.size and abs(w.sum() - 1.0) > WEIGHT_TOL):
            raise InvalidArgument("weights must be positive and sum to 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> "PointCloud":
        pts = np.asarray(points, dtype=np.float64)
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n) if n else np.zeros(0))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class TransportPlan:
    coupling: np.ndarray
    cost: float
    ground_cost: np.ndarray


@dataclass(frozen=True)
class SinkhornResult:
    plan: TransportPlan
    converged: bool
    iterations: int
    marginal_error: float
    log_domain: bool


@dataclass(frozen=True)
class GapResult:
    value: float
    solver: str
    epsilon: float | None
    max_points: int
    seed: int
    points_a: int
    points_b: int

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "solver": self.solver,
            "epsilon": self.epsilon,
            "max_points": self.max_points,
            "seed": self.seed,
            "points_a": self.points_a,
            "points_b": self.points_b,
        }


def ground_cost(a: PointCloud, b: PointCloud) -> np.ndarray:
    """Pairwise Euclidean distances, shape ``len(a) x len(b)``."""
    if a.dim != b.dim:
        raise DimMismatch(f"point dimensions differ: {a.dim} vs {b.dim}")
    x, y = a.points, b.points
    # direct differences rather than the |x|^2 + |y|^2 - 2xy expansion, which
    # loses the exact zero on identical points
    diff = x[:, None, :] - y[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _check_pair(a: PointCloud, b: PointCloud) -> None:
    if len(a) == 0 or len(b) == 0:
        raise Degenerate(f"empty point cloud ({len(a)} vs {len(b)} points)")
    if a.dim != b.dim:
        raise DimMismatch(f"point dimensions differ: {a.dim} vs {b.dim}")


@njit(cache=True)
def _ssp(C, excess, deficit, mass_tol):
    n, m = C.shape
    inf = np.inf
    flow = np.zeros((n, m))

    # column then row reduction gives a tight arc at every node
    pc = np.empty(m)
    for j in range(m):
        pc[j] = C[:, j].min()
    pr = np.empty(n)
    for i in range(n):
        pr[i] = -(C[i] - pc).min()

    # greedy start on tight arcs
    for i in range(n):
        for j in range(m):
            if excess[i] <= mass_tol:
                break
            if C[i, j] + pr[i] - pc[j] <= REDUCED_COST_TOL and deficit[j] > 0:
                amt = min(excess[i], deficit[j])
                flow[i, j] += amt
                excess[i] -= amt
                deficit[j] -= amt

    # sources sit at distance 0 and keep their potentials, so the cheapest
    # source arc into each column is cached and refreshed when a source dries up
    is_src = excess > mass_tol
    src_arg = np.full(m, -1)
    src_min = np.full(m, inf)
    for i in range(n):
        if is_src[i]:
            for j in range(m):
                s = C[i, j] + pr[i]
                if s < src_min[j]:
                    src_min[j] = s
                    src_arg[j] = i

    dcol = np.empty(m)
    parent_col = np.empty(m, dtype=np.int64)
    col_done = np.empty(m, dtype=np.bool_)
    drow = np.empty(n)
    parent_row = np.empty(n, dtype=np.int64)
    row_done = np.empty(n, dtype=np.bool_)
    n_src = is_src.sum()

    while n_src > 0:
        remaining = 0.0
        for j in range(m):
            remaining = max(remaining, deficit[j])
        if remaining <= mass_tol:
            break
        for j in range(m):
            dcol[j] = max(src_min[j] - pc[j], 0.0)
            parent_col[j] = src_arg[j]
            col_done[j] = False
        for i in range(n):
            drow[i] = 0.0 if is_src[i] else inf
            parent_row[i] = -1
            row_done[i] = is_src[i]

        target = -1
        while True:
            j = -1
            best = inf
            for jj in range(m):
                if not col_done[jj] and dcol[jj] < best:
                    best = dcol[jj]
                    j = jj
            if j < 0:
                break
            col_done[j] = True
            if deficit[j] > mass_tol:
                target = j
                break
            # backward arcs j -> i exist where flow[i, j] > 0 and are tight
            for i in range(n):
                if flow[i, j] > mass_tol and not row_done[i]:
                    row_done[i] = True
                    drow[i] = best
                    parent_row[i] = j
                    for jj in range(m):
                        if not col_done[jj]:
                            cand = best + max(C[i, jj] + pr[i] - pc[jj], 0.0)
                            if cand < dcol[jj]:
                                dcol[jj] = cand
                                parent_col[jj] = i
        if target < 0:
            return flow, False

        D = dcol[target]
        for i in range(n):
            pr[i] += min(drow[i], D) if row_done[i] else D
        for j in range(m):
            pc[j] += min(dcol[j], D) if col_done[j] else D

        # walk back to a source row, collecting the bottleneck
        amt = deficit[target]
        j = target
        while True:
            i = parent_col[j]
            jb = parent_row[i]
            if jb < 0:
                amt = min(amt, excess[i])
                src = i
                break
            amt = min(amt, flow[i, jb])
            j = jb
        j = target
        while True:
            i = parent_col[j]
            jb = parent_row[i]
            flow[i, j] += amt
            if jb < 0:
                break
            flow[i, jb] -= amt
            j = jb
        excess[src] -= amt
        deficit[target] -= amt

        if excess[src] <= mass_tol:
            is_src[src] = False
            n_src -= 1
            for j in range(m):
                if src_arg[j] == src:
                    src_min[j] = inf
                    src_arg[j] = -1
                    for i in range(n):
                        if is_src[i]:
                            s = C[i, j] + pr[i]
                            if s < src_min[j]:
                                src_min[j] = s
                                src_arg[j] = i
    return flow, True


def transport_lp(supply: np.ndarray, demand: np.ndarray, cost: np.ndarray) -> np.ndarray:
    """Optimal coupling of the balanced transportation problem.

    Successive shortest augmenting paths on the bipartite residual graph.
    Node potentials keep reduced costs ``C[i, j] + pr[i] - pc[j]``
    nonnegative, so each search is a dense Dijkstra that stops as soon as a
    column with unmet demand is settled. Arcs carrying flow stay tight,
    which is the complementary-slackness certificate of optimality.
    """
    C = np.ascontiguousarray(cost, dtype=np.float64)
    excess = np.array(supply, dtype=np.float64)
    deficit = np.array(demand, dtype=np.float64)
    if C.shape != (excess.size, deficit.size):
        raise InvalidArgument(f"cost matrix shape {C.shape} does not match {excess.size} x {deficit.size} marginals")
    mass_tol = 1e-14 * max(excess.sum(), deficit.sum(), 1.0)
    flow, ok = _ssp(C, excess, deficit, mass_tol)
    if not ok:
        raise NumericalUnderflow("no augmenting path found; supply and demand totals differ")
    return np.maximum(flow, 0.0)


def emd_exact(a: PointCloud, b: PointCloud) -> TransportPlan:
    """Exact EMD with Euclidean ground cost.

    Returns the optimal coupling; ``cost`` is ``<C, P>``.
    """
    _check_pair(a, b)
    C = ground_cost(a, b)
    P = transport_lp(a.weights, b.weights, C)
    return TransportPlan(coupling=P, cost=float(np.sum(P * C)), ground_cost=C)


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    mx = np.max(x, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    return np.squeeze(mx, axis=axis) + np.log(np.sum(np.exp(x - mx), axis=axis))


def round_to_marginals(P: np.ndarray, wa: np.ndarray, wb: np.ndarray) -> np.ndarray:
    """Project an approximate coupling onto the transport polytope.

    Rows and columns that carry too much mass are scaled down, then the
    remaining deficits are filled with a rank-one correction, so the result
    matches both marginals to machine precision and stays nonnegative.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.minimum(np.where(P.sum(axis=1) > 0, wa / P.sum(axis=1), 1.0), 1.0)
    P = P * x[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.minimum(np.where(P.sum(axis=0) > 0, wb / P.sum(axis=0), 1.0), 1.0)
    P = P * y[None, :]
    # deficits are nonnegative after the downscaling; clip roundoff
    err_a = np.maximum(wa - P.sum(axis=1), 0.0)
    err_b = np.maximum(wb - P.sum(axis=0), 0.0)
    total = err_b.sum()
    if total > 0:
        P = P + np.outer(err_a, err_b) / total
    return P


def _marginal_error(P: np.ndarray, wa: np.ndarray, wb: np.ndarray) -> float:
    return float(np.abs(P.sum(axis=1) - wa).sum() + np.abs(P.sum(axis=0) - wb).sum())


def emd_sinkhorn(
    a: PointCloud,
    b: PointCloud,
    epsilon: float,
    max_iters: int = 10000,
    tol: float = 1e-9,
) -> SinkhornResult:
    """Entropy-regularised transport by Sinkhorn scaling.

    One iteration rescales rows then columns. ``converged`` is set once the
    L1 violation of the row marginal (columns are exact after each column
    update) is at most ``tol``;
    ``iterations`` counts iterations at the requested ``epsilon``. When
    ``max(C) / epsilon`` exceeds 500 the updates run on log-potentials,
    warm-started by halving the regularisation from ``max(C)`` down to
    ``epsilon``.

    The returned coupling is the scaled plan rounded onto the transport
    polytope, so it is feasible even when the iterations stop early.
    ``marginal_error`` is the violation before rounding. The reported cost
    is ``<C, P>``, without the entropy term.
    """
    if not epsilon > 0:
        raise InvalidArgument(f"epsilon must be positive, got {epsilon}")
    _check_pair(a, b)
    C = ground_cost(a, b)
    wa, wb = a.weights, b.weights
    cmax = float(C.max())
    log_domain = cmax / epsilon > LOG_DOMAIN_RATIO
    converged = False
    err = np.inf
    it = 0

    # the row sums of the current plan fall out of the next row update, so
    # each iteration costs two matrix reductions; columns are exact after
    # every column update
    if not log_domain:
        K = np.exp(-C / epsilon)
        v = np.ones_like(wb)
        Kv = K @ v
        for it in range(1, max_iters + 1):
            with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                u = wa / Kv
                v = wb / (K.T @ u)
                Kv = K @ v
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                raise NumericalUnderflow(f"scaling vectors overflowed at epsilon={epsilon:g} (max cost {cmax:g})")
            err = float(np.abs(u * Kv - wa).sum())
            if err <= tol:
                converged = True
                break
        P = u[:, None] * K * v[None, :]
    else:
        log_wa, log_wb = np.log(wa), np.log(wb)
        g = np.zeros_like(wb)

        def solve(eps, stop, iters):
            nonlocal g
            h = _logsumexp((g[None, :] - C) / eps, axis=1)
            e = np.inf
            for k in range(1, iters + 1):
                f = eps * (log_wa - h)
                g = eps * (log_wb - _logsumexp((f[:, None] - C) / eps, axis=0))
                h = _logsumexp((g[None, :] - C) / eps, axis=1)
                e = float(np.abs(np.exp(f / eps + h) - wa).sum())
                if e <= stop:
                    break
            return f, k, e

        eps_k = cmax
        while eps_k > epsilon:
            solve(eps_k, 1e-3, max_iters)
            eps_k *= 0.5
        f, it, err = solve(epsilon, tol, max_iters)
        converged = err <= tol
        P = np.exp((f[:, None] + g[None, :] - C) / epsilon)
        if not np.all(np.isfinite(P)):
            raise NumericalUnderflow(f"log-domain potentials diverged at epsilon={epsilon:g}")

    P = round_to_marginals(P, wa, wb)
    plan = TransportPlan(coupling=P, cost=float(np.sum(P * C)), ground_cost=C)
    return SinkhornResult(plan=plan, converged=converged, iterations=it, marginal_error=err, log_domain=log_domain)


def subsample(s: FeatureSet, max_points: int, seed: int) -> PointCloud:
    """Uniformly weighted cloud of at most ``max_points`` snippet rows.

    Rows are drawn without replacement and returned in their original order.
    """
    rows = s.flatten()
    if rows.shape[0] == 0:
        raise EmptySet(f"feature set {s.name!r} has no snippets")
    if max_points < 1:
        raise InvalidArgument(f"max_points must be >= 1, got {max_points}")
    if rows.shape[0] > max_points:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(rows.shape[0], size=max_points, replace=False))
        rows = rows[idx]
    return PointCloud.uniform(rows)


def domain_gap(
    a: FeatureSet,
    b: FeatureSet,
    max_points: int = 2000,
    seed: int = 0,
    solver: str = "exact",
    epsilon: float | None = None,
) -> GapResult:
    """EMD between the snippet distributions of two feature sets.

    ``a`` is subsampled with ``seed`` and ``b`` with ``seed + 1``. For the
    Sinkhorn solver ``epsilon`` defaults to ``1e-3 * mean(C)``; the value
    actually used is recorded in the result.
    """
    if a.dim != b.dim:
        raise DimMismatch(f"feature dimensions differ: {a.name!r} has dim {a.dim}, {b.name!r} has dim {b.dim}")
    pa = subsample(a, max_points, seed)
    pb = subsample(b, max_points, seed + 1)
    if solver == "exact":
        value = emd_exact(pa, pb).cost
        eps_used = None
    elif solver == "sinkhorn":
        eps_used = float(epsilon) if epsilon is not None else 1e-3 * float(ground_cost(pa, pb).mean())
        if eps_used <= 0:
            # all points coincide
            value, eps_used = 0.0, None
        else:
            value = emd_sinkhorn(pa, pb, eps_used).plan.cost
    else:
        raise InvalidArgument(f"unknown solver {solver!r} (expected 'exact' or 'sinkhorn')")
    return GapResult(
        value=float(value),
        solver=solver,
        epsilon=eps_used,
        max_points=int(max_points),
        seed=int(seed),
        points_a=len(pa),
        points_b=len(pb),
    )
