"""Per-step expected-allocation program and its KKT-certified solver.

Each scheduling step maximizes a weighted proportionally fair utility of
per-class total allocations minus marginal assignment costs,

    (1/V) sum_i w_i Q_i log(sum_j y_ij)  -  sum_ij (gamma - rhat_ij) y_ij

subject to per-server-class capacity ``sum_i y_ij <= n_j`` and ``y >= 0``.
The log term keeps every active class interior, the feasible set
factorizes into one capped simplex per server class, and solutions are
certified by an explicit KKT residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "AllocationProblem",
    "Allocation",
    "solve",
    "kkt_residual",
    "recover_duals",
    "closed_form_single_server",
    "project_capped_simplex",
]

DEFAULT_TOL = 1e-8
MAX_ITERS = 100_000


@dataclass(frozen=True)
class AllocationProblem:
    """One step's allocation program over the active job classes."""

    weights: np.ndarray        # w_i > 0, per active class
    queue_lengths: np.ndarray  # Q_i >= 1, per active class
    r_hat: np.ndarray          # estimated rewards, shape (I, J), in [-a, a]
    capacities: np.ndarray     # n_j > 0, per active server class
    gamma: float
    V: float
    reward_bound: float = 1.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        q = np.asarray(self.queue_lengths, dtype=float)
        r = np.asarray(self.r_hat, dtype=float)
        n = np.asarray(self.capacities, dtype=float)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "queue_lengths", q)
        object.__setattr__(self, "r_hat", r)
        object.__setattr__(self, "capacities", n)
        if r.ndim != 2 or r.shape != (w.shape[0], n.shape[0]):
            raise ValueError(f"r_hat shape {r.shape} incompatible with {w.shape[0]} classes "
                             f"and {n.shape[0]} server classes")
        if w.shape[0] and (np.any(w <= 0) or np.any(q < 1)):
            raise ValueError("weights must be positive and queue lengths >= 1")
        if np.any(n <= 0):
            raise ValueError("capacities must be positive")
        if self.V <= 0:
            raise ValueError("V must be positive")
        if self.gamma <= self.reward_bound:
            raise ValueError("gamma must exceed the reward bound")
        if r.size and np.max(np.abs(r)) > self.reward_bound + 1e-9:
            raise ValueError("reward estimates must lie in [-a, a]")

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def num_servers(self) -> int:
        return self.capacities.shape[0]

    def utility_scale(self) -> np.ndarray:
        """Per-class marginal-utility numerator w_i Q_i / V."""
        return self.weights * self.queue_lengths / self.V

    def marginal_costs(self) -> np.ndarray:
        """gamma - rhat, elementwise; strictly positive by construction."""
        return self.gamma - self.r_hat

    def objective(self, y: np.ndarray) -> float:
        totals = y.sum(axis=1)
        if np.any(totals <= 0):
            return -math.inf
        return float(self.utility_scale() @ np.log(totals) - (self.marginal_costs() * y).sum())


@dataclass(frozen=True)
class Allocation:
    """Solver output: primal allocation, dual prices, and its KKT residual."""

    y: np.ndarray              # (I, J), nonnegative
    server_prices: np.ndarray  # q_j >= 0, one per server class
    entry_duals: np.ndarray    # h_ij >= 0, one per (i, j)
    kkt_residual: float
    objective: float
    iterations: int
    converged: bool

    @property
    def row_totals(self) -> np.ndarray:
        return self.y.sum(axis=1)


def project_capped_simplex(v: np.ndarray, cap: float) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum(x) <= cap}."""
    x = np.maximum(v, 0.0)
    total = x.sum()
    if total <= cap:
        return x
    # Sum must be exactly cap: sorted-threshold projection onto the simplex.
    u = np.sort(v)[::-1]
    cssv = np.cumsum(u) - cap
    k = np.arange(1, v.shape[0] + 1)
    valid = u - cssv / k > 0
    rho = np.nonzero(valid)[0][-1]
    theta = cssv[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _project_columns(y: np.ndarray, capacities: np.ndarray) -> np.ndarray:
    out = np.empty_like(y)
    for j in range(y.shape[1]):
        out[:, j] = project_capped_simplex(y[:, j], capacities[j])
    return out


def recover_duals(problem: AllocationProblem, y: np.ndarray, active_tol: float = 1e-9):
    """KKT-consistent dual estimates from a primal point.

    Server prices take the largest stationarity-implied multiplier among
    entries with meaningful allocation; entry duals absorb the remaining
    stationarity slack at the boundary.
    """
    totals = y.sum(axis=1)
    marg_util = problem.utility_scale() / np.maximum(totals, 1e-300)   # shape (I,)
    costs = problem.marginal_costs()
    implied = marg_util[:, None] - costs                               # q implied per entry
    active = y > active_tol
    q = np.zeros(problem.num_servers)
    for j in range(problem.num_servers):
        if np.any(active[:, j]):
            q[j] = max(0.0, float(implied[active[:, j], j].max()))
    h = np.maximum(0.0, q[None, :] + costs - marg_util[:, None])
    return q, h


def kkt_residual(problem: AllocationProblem, y: np.ndarray, q: np.ndarray, h: np.ndarray) -> float:
    """Max-norm aggregate of stationarity, feasibility, and complementarity.

    Zero exactly when (y, q, h) is an optimal primal-dual triple.
    """
    y = np.asarray(y, dtype=float)
    q = np.asarray(q, dtype=float)
    h = np.asarray(h, dtype=float)
    if y.shape != (problem.num_classes, problem.num_servers):
        raise ValueError("allocation shape mismatch")
    if q.shape != (problem.num_servers,) or h.shape != y.shape:
        raise ValueError("dual shape mismatch")
    if problem.num_classes == 0:
        return 0.0
    totals = y.sum(axis=1)
    if np.any(totals <= 0):
        return math.inf
    marg_util = problem.utility_scale() / totals
    costs = problem.marginal_costs()
    stationarity = np.abs(marg_util[:, None] - q[None, :] - costs + h)
    col_slack = problem.capacities - y.sum(axis=0)
    res = float(stationarity.max())
    res = max(res, float(np.max(-y, initial=0.0)))                 # y >= 0
    res = max(res, float(np.max(-col_slack, initial=0.0)))         # capacity
    res = max(res, float(np.max(-q, initial=0.0)))                 # dual feasibility
    res = max(res, float(np.max(-h, initial=0.0)))
    res = max(res, float(np.max(np.abs(q * col_slack), initial=0.0)))   # complementarity
    res = max(res, float(np.max(np.abs(h * y), initial=0.0)))
    return res


def _transport_polish(problem: AllocationProblem, y: np.ndarray):
    """Exact within-row split for the current row totals.

    The objective depends on y only through row totals and the linear cost,
    so for fixed totals the best split solves a tiny transportation LP; its
    vertex restores exact complementary slackness and its duals are the
    server prices.  Falls back to the heuristic duals if the LP degenerates.
    """
    from bilisched.oracle import OracleProblem, solve_oracle

    totals = y.sum(axis=1)
    if np.any(totals <= 0):
        q, h = recover_duals(problem, y)
        return y, q, h
    costs = problem.marginal_costs()
    try:
        lp = solve_oracle(OracleProblem(totals, problem.capacities, -costs))
    except (ValueError, RuntimeError):
        q, h = recover_duals(problem, y)
        return y, q, h
    # The LP pins the split (exact complementarity); prices must come from
    # the utility stationarity, not the (degenerate) LP vertex dual.
    y_lp = lp.p * totals[:, None]
    q, h = recover_duals(problem, y_lp)
    return y_lp, q, h


def _exact_finish(problem: AllocationProblem, y: np.ndarray):
    """Attempt an exact solution from the active structure of ``y``.

    A transportation vertex for the current row totals yields a support
    forest; on each connected component the stationarity equations leave a
    single scalar degree of freedom, pinned either by an unsaturated column
    (zero price) or by the component's capacity balance (monotone scalar
    equation).  Returns (y, q, h) or None when the structure is inconsistent;
    the caller certifies the result through the KKT residual either way.
    """
    from bilisched.oracle import OracleProblem, solve_oracle

    wq = problem.utility_scale()
    costs = problem.marginal_costs()
    caps = problem.capacities
    i_count, j_count = problem.num_classes, problem.num_servers
    totals = y.sum(axis=1)
    if np.any(totals <= 0):
        return None
    try:
        lp = solve_oracle(OracleProblem(totals, caps, -costs))
    except (ValueError, RuntimeError):
        return None
    y0 = lp.p * totals[:, None]
    support = y0 > max(1e-10, 1e-9 * float(y0.max()))
    for i in range(i_count):
        if not support[i].any():
            support[i, int(np.argmin(costs[i]))] = True
    colsum = y0.sum(axis=0)
    tight = caps - colsum <= 1e-8 * np.maximum(1.0, caps)

    # Potentials along the support graph: m_i = a_i + t_comp, q_j = base_j + t_comp.
    a = np.full(i_count, np.nan)
    base = np.full(j_count, np.nan)
    comp_of_row = np.full(i_count, -1, dtype=int)
    comp_of_col = np.full(j_count, -1, dtype=int)
    scale = 1.0 + float(np.abs(costs).max())
    n_comp = 0
    for start in range(i_count):
        if comp_of_row[start] >= 0:
            continue
        comp = n_comp
        n_comp += 1
        a[start] = 0.0
        comp_of_row[start] = comp
        frontier = [("row", start)]
        while frontier:
            kind, node = frontier.pop()
            if kind == "row":
                for j in range(j_count):
                    if not support[node, j]:
                        continue
                    val = a[node] - costs[node, j]
                    if comp_of_col[j] < 0:
                        base[j] = val
                        comp_of_col[j] = comp
                        frontier.append(("col", j))
                    elif abs(base[j] - val) > 1e-6 * scale:
                        return None
            else:
                for i in range(i_count):
                    if not support[i, node]:
                        continue
                    val = base[node] + costs[i, node]
                    if comp_of_row[i] < 0:
                        a[i] = val
                        comp_of_row[i] = comp
                        frontier.append(("row", i))
                    elif abs(a[i] - val) > 1e-6 * scale:
                        return None

    t_comp = np.zeros(n_comp)
    for comp in range(n_comp):
        rows = np.nonzero(comp_of_row == comp)[0]
        cols = np.nonzero(comp_of_col == comp)[0]
        slack_cols = [j for j in cols if not tight[j]]
        if slack_cols:
            t = max(-base[j] for j in slack_cols)
        else:
            # All columns saturated: balance supply against capacity.
            target = float(caps[cols].sum())
            lo = float(-a[rows].min())
            hi = max(lo + 1.0, 1.0)
            for _ in range(200):
                if (wq[rows] / (a[rows] + hi)).sum() < target:
                    break
                hi *= 2.0
            else:
                return None
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if mid <= lo or (wq[rows] / np.maximum(a[rows] + mid, 1e-300)).sum() > target:
                    lo = mid
                else:
                    hi = mid
                if hi - lo <= 1e-16 * max(1.0, abs(hi)):
                    break
            t = 0.5 * (lo + hi)
        t_comp[comp] = t

    m = a + t_comp[comp_of_row]
    if np.any(m <= 0):
        return None
    q = np.zeros(j_count)
    seen = comp_of_col >= 0
    q[seen] = base[seen] + t_comp[comp_of_col[seen]]
    if np.any(q < -1e-7):
        return None
    q = np.maximum(q, 0.0)
    y_rows = wq / m
    try:
        final = solve_oracle(OracleProblem(y_rows, caps, -costs))
    except (ValueError, RuntimeError):
        return None
    y_exact = final.p * y_rows[:, None]
    h = np.maximum(0.0, q[None, :] + costs - m[:, None])
    return y_exact, q, h


def _default_start(problem: AllocationProblem) -> np.ndarray:
    i_count = problem.num_classes
    j_count = problem.num_servers
    per_class = problem.utility_scale() / ((problem.gamma + problem.reward_bound) * j_count)
    y0 = np.minimum(problem.capacities[None, :] / i_count, per_class[:, None])
    return np.maximum(y0, 1e-12)


def solve(problem: AllocationProblem, tol: float = DEFAULT_TOL,
          warm_start: Optional[np.ndarray] = None, max_iters: int = MAX_ITERS) -> Allocation:
    """Solve the allocation program by spectral projected gradient ascent.

    Per-column projections keep iterates feasible; Barzilai-Borwein step
    sizes with a nonmonotone line search handle the stiff log barrier.
    Whatever point the budget ends at is returned with its certified
    residual and ``converged`` flag.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    if problem.num_classes == 0:
        return Allocation(y=np.zeros((0, problem.num_servers)),
                          server_prices=np.zeros(problem.num_servers),
                          entry_duals=np.zeros((0, problem.num_servers)),
                          kkt_residual=0.0, objective=0.0, iterations=0, converged=True)

    wq = problem.utility_scale()
    costs = problem.marginal_costs()
    caps = problem.capacities

    if warm_start is not None and warm_start.shape == (problem.num_classes, problem.num_servers):
        y = _project_columns(np.asarray(warm_start, dtype=float), caps)
        empty = y.sum(axis=1) <= 0
        if np.any(empty):
            # Seed rows new to the warm start, then restore feasibility.
            y[empty] = _default_start(problem)[empty]
            y = _project_columns(y, caps)
            if np.any(y.sum(axis=1) <= 0):
                y = _default_start(problem)
    else:
        y = _default_start(problem)

    def grad(point):
        totals = point.sum(axis=1)
        return wq[:, None] / totals[:, None] - costs

    f_y = problem.objective(y)
    g = grad(y)
    # Start from the inverse of the log-term curvature at the initial point.
    step = float(np.min(problem.V * y.sum(axis=1) ** 2
                        / (problem.weights * problem.queue_lengths)))
    step = min(max(step, 1e-12), 1e3)
    recent = [f_y]
    best_y, best_res = y, math.inf
    iters_done = 0

    for it in range(1, max_iters + 1):
        iters_done = it
        cand = _project_columns(y + step * g, caps)
        direction = cand - y
        slope = float((g * direction).sum())
        if slope <= 0:
            step = max(step * 0.5, 1e-14)
            if slope == 0.0:
                y_pol, q, h = _transport_polish(problem, y)
                res = kkt_residual(problem, y_pol, q, h)
                if res <= tol:
                    return Allocation(y=y_pol, server_prices=q, entry_duals=h, kkt_residual=res,
                                      objective=problem.objective(y_pol), iterations=it,
                                      converged=True)
            continue
        f_ref = max(recent)
        t = 1.0
        f_new = problem.objective(y + direction)
        for _ in range(40):
            if f_new >= f_ref + 1e-4 * t * slope:
                break
            t *= 0.5
            f_new = problem.objective(y + t * direction)
        y_new = y + t * direction
        g_new = grad(y_new)
        dy = y_new - y
        dg = g_new - g
        denom = -float((dy * dg).sum())
        if denom > 1e-300:
            step = float((dy * dy).sum()) / denom
            step = min(max(step, 1e-12), 1e6)
        else:
            step *= 2.0
        y, g, f_y = y_new, g_new, f_new
        recent.append(f_y)
        if len(recent) > 10:
            recent.pop(0)

        if it % 5 == 0 or it == max_iters:
            y_pol, q, h = _transport_polish(problem, y)
            res = kkt_residual(problem, y_pol, q, h)
            if res < best_res:
                best_y, best_res = y_pol, res
            if res <= tol:
                return Allocation(y=y_pol, server_prices=q, entry_duals=h, kkt_residual=res,
                                  objective=problem.objective(y_pol), iterations=it,
                                  converged=True)
            finish = _exact_finish(problem, y_pol)
            if finish is not None:
                y_fin, q_fin, h_fin = finish
                res_fin = kkt_residual(problem, y_fin, q_fin, h_fin)
                if res_fin <= tol:
                    return Allocation(y=y_fin, server_prices=q_fin, entry_duals=h_fin,
                                      kkt_residual=res_fin,
                                      objective=problem.objective(y_fin), iterations=it,
                                      converged=True)
                if res_fin < best_res:
                    best_y, best_res = y_fin, res_fin

    y_pol, q, h = _transport_polish(problem, best_y)
    res = kkt_residual(problem, y_pol, q, h)
    if res > best_res:
        y_pol, res = best_y, best_res
        q, h = recover_duals(problem, best_y, active_tol=min(1e-9, tol))
    return Allocation(y=y_pol, server_prices=q, entry_duals=h, kkt_residual=res,
                      objective=problem.objective(y_pol), iterations=iters_done,
                      converged=res <= tol)


def closed_form_single_server(problem: AllocationProblem) -> Allocation:
    """Exact solution when there is exactly one server class.

    If the unconstrained optimum fits under the capacity the price is zero;
    otherwise the price solves a monotone scalar equation by bisection.
    """
    if problem.num_servers != 1:
        raise ValueError("closed form requires exactly one server class")
    if problem.num_classes == 0:
        return Allocation(y=np.zeros((0, 1)), server_prices=np.zeros(1),
                          entry_duals=np.zeros((0, 1)), kkt_residual=0.0,
                          objective=0.0, iterations=0, converged=True)
    wq = problem.utility_scale()
    costs = problem.marginal_costs()[:, 0]
    cap = float(problem.capacities[0])
    unconstrained = wq / costs
    if unconstrained.sum() <= cap:
        y = unconstrained[:, None]
        q = np.zeros(1)
    else:
        lo, hi = 0.0, wq.sum() / cap
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if (wq / (mid + costs)).sum() > cap:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-16 * max(1.0, hi):
                break
        q_val = 0.5 * (lo + hi)
        y = (wq / (q_val + costs))[:, None]
        # Rescale the roundoff so the capacity holds exactly.
        y *= cap / y.sum()
        q = np.array([wq[0] / y[0, 0] - costs[0]])
    h = np.zeros_like(y)
    res = kkt_residual(problem, y, q, h)
    return Allocation(y=y, server_prices=q, entry_duals=h, kkt_residual=res,
                      objective=problem.objective(y), iterations=0, converged=True)
