"""Distributed allocation computation with communication delays.

Instead of the hard per-server capacity, each server class carries a soft
congestion price p_j (a nondecreasing penalty derivative); job nodes or
server nodes then iterate delayed projected-gradient updates toward the
equilibrium of the penalized program.  The tick loop is deterministic and
single threaded; the delay ring buffers ARE the concurrency model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

__all__ = [
    "PenaltySpec",
    "SoftPenaltyProblem",
    "EquilibriumPoint",
    "DelayedDynamics",
    "equilibrium_solve",
    "simulate_dynamics",
    "stability_check",
    "StabilityReport",
]

_GAUSS_NODES = 64


@dataclass(frozen=True)
class PenaltySpec:
    """Soft capacity penalty for one server class.

    ``power``:    p(z) = (z / n)^exponent on [0, inf)
    ``bounded``:  p(z) = ceiling * u / (1 + u), u = (z / n)^exponent; p <= ceiling
    ``rational``: p(z) = (z / n) / (1 - z / n) on [0, n), vertical asymptote at n
    """

    kind: str
    capacity: float
    exponent: float = 1.0     # beta (power, bounded)
    ceiling: float = 1.0      # gamma_j (bounded only)

    def __post_init__(self):
        if self.kind not in ("power", "bounded", "rational"):
            raise ValueError(f"unknown penalty kind {self.kind!r}")
        if self.capacity <= 0:
            raise ValueError("capacity must be positive")
        if self.exponent <= 0:
            raise ValueError("exponent must be positive")
        if self.kind == "bounded" and self.ceiling <= 0:
            raise ValueError("ceiling must be positive")

    @property
    def domain_sup(self) -> float:
        return self.capacity if self.kind == "rational" else math.inf

    def price(self, z: float) -> float:
        z = float(z)
        if z < 0:
            raise ValueError("penalty argument must be nonnegative")
        s = z / self.capacity
        if self.kind == "power":
            return s ** self.exponent
        if self.kind == "bounded":
            u = s ** self.exponent
            return self.ceiling * u / (1.0 + u)
        if s >= 1.0:
            return math.inf
        return s / (1.0 - s)

    def price_derivative(self, z: float) -> float:
        z = float(z)
        if z < 0:
            raise ValueError("penalty argument must be nonnegative")
        n = self.capacity
        s = z / n
        beta = self.exponent
        if self.kind == "power":
            if z == 0.0:
                return beta / n if beta == 1.0 else (math.inf if beta < 1.0 else 0.0)
            return beta * s ** (beta - 1.0) / n
        if self.kind == "bounded":
            if z == 0.0:
                return self.ceiling * beta / n if beta == 1.0 else \
                    (math.inf if beta < 1.0 else 0.0)
            u = s ** beta
            return self.ceiling * beta * s ** (beta - 1.0) / (n * (1.0 + u) ** 2)
        if s >= 1.0:
            return math.inf
        return 1.0 / (n * (1.0 - s) ** 2)

    def cumulative(self, z: float) -> float:
        """C(z) = integral of the price from 0 to z; convex by construction."""
        z = float(z)
        if z < 0:
            raise ValueError("penalty argument must be nonnegative")
        n = self.capacity
        s = z / n
        if self.kind == "power":
            return n * s ** (self.exponent + 1.0) / (self.exponent + 1.0)
        if self.kind == "rational":
            if s >= 1.0:
                return math.inf
            return -z - n * math.log1p(-s)
        if self.exponent == 1.0:
            return self.ceiling * (z - n * math.log1p(s))
        nodes, weights = np.polynomial.legendre.leggauss(_GAUSS_NODES)
        half = z / 2.0
        pts = half * (nodes + 1.0)
        return float(half * weights @ np.array([self.price(p) for p in pts]))


@dataclass(frozen=True)
class SoftPenaltyProblem:
    """Penalized allocation program: utilities minus congestion and assignment costs."""

    utility_scales: np.ndarray      # w_i Q_i / V per active class
    marginal_costs: np.ndarray      # gamma - rhat, shape (I, J), >= 0
    penalties: Sequence[PenaltySpec]

    def __post_init__(self):
        wq = np.asarray(self.utility_scales, dtype=float)
        c = np.asarray(self.marginal_costs, dtype=float)
        object.__setattr__(self, "utility_scales", wq)
        object.__setattr__(self, "marginal_costs", c)
        object.__setattr__(self, "penalties", tuple(self.penalties))
        if c.shape != (wq.shape[0], len(self.penalties)):
            raise ValueError("cost matrix shape must match classes x penalties")
        if np.any(wq <= 0):
            raise ValueError("utility scales must be positive")
        if np.any(c < 0):
            raise ValueError("marginal costs must be nonnegative")

    @property
    def num_classes(self) -> int:
        return self.utility_scales.shape[0]

    @property
    def num_servers(self) -> int:
        return len(self.penalties)

    def prices(self, col_totals: np.ndarray) -> np.ndarray:
        return np.array([p.price(z) for p, z in zip(self.penalties, col_totals)])

    def objective(self, y: np.ndarray) -> float:
        rows = y.sum(axis=1)
        cols = y.sum(axis=0)
        if np.any(rows <= 0):
            return -math.inf
        if any(z >= p.domain_sup for p, z in zip(self.penalties, cols)):
            return -math.inf
        cost = sum(p.cumulative(z) for p, z in zip(self.penalties, cols))
        return float(self.utility_scales @ np.log(rows) - cost
                     - (self.marginal_costs * y).sum())

    def optimality_residuals(self, y: np.ndarray):
        """Residuals of the three equilibrium conditions (nonnegativity,
        price dominance, complementarity)."""
        rows = np.maximum(y.sum(axis=1), 1e-300)
        grad = self.utility_scales[:, None] / rows[:, None] \
            - self.prices(y.sum(axis=0))[None, :] - self.marginal_costs
        r_nonneg = float(np.max(-y, initial=0.0))
        r_gradient = float(np.max(grad, initial=0.0))
        r_complementarity = float(np.max(np.abs(y * grad), initial=0.0))
        return r_nonneg, max(0.0, r_gradient), r_complementarity


@dataclass(frozen=True)
class EquilibriumPoint:
    """Maximizer of the soft-penalty program with its condition residuals."""

    y: np.ndarray
    row_totals: np.ndarray
    col_totals: np.ndarray
    residual: float
    interior: bool


def _snap_zeros(problem: SoftPenaltyProblem, y: np.ndarray) -> np.ndarray:
    """Zero out vanishing entries whose gradient points outward."""
    rows = np.maximum(y.sum(axis=1), 1e-300)
    grad = problem.utility_scales[:, None] / rows[:, None] \
        - problem.prices(y.sum(axis=0))[None, :] - problem.marginal_costs
    snapped = y.copy()
    kill = (y <= 1e-7 * max(1.0, float(y.max()))) & (grad < 0)
    snapped[kill] = 0.0
    if np.any(snapped.sum(axis=1) <= 0):
        return y
    return snapped


def _support_newton(problem: SoftPenaltyProblem, y: np.ndarray, sweeps: int = 6) -> np.ndarray:
    """Least-squares Newton on the support: drive the support gradient to zero.

    The stationarity system is typically rank deficient (flat within-support
    directions), so the step solves the linearized system in least squares.
    Any step that leaves the domain or raises the residual is discarded.
    """
    support = np.argwhere(y > 0)
    if support.shape[0] == 0:
        return y
    best = y
    best_res = max(problem.optimality_residuals(y)[1:])
    cur = y.copy()
    for _ in range(sweeps):
        rows = cur.sum(axis=1)
        cols = cur.sum(axis=0)
        if np.any(rows <= 0) or any(z >= p.domain_sup for p, z in zip(problem.penalties, cols)):
            break
        prices = problem.prices(cols)
        dprices = np.array([p.price_derivative(z) for p, z in zip(problem.penalties, cols)])
        grad = problem.utility_scales[:, None] / rows[:, None] - prices[None, :] \
            - problem.marginal_costs
        f_vec = np.array([grad[i, j] for i, j in support])
        m = support.shape[0]
        jac = np.zeros((m, m))
        for a, (i, j) in enumerate(support):
            for b, (k, l) in enumerate(support):
                val = 0.0
                if i == k:
                    val -= problem.utility_scales[i] / rows[i] ** 2
                if j == l:
                    val -= dprices[j]
                jac[a, b] = val
        try:
            delta = np.linalg.lstsq(jac, -f_vec, rcond=None)[0]
        except np.linalg.LinAlgError:
            break
        nxt = cur.copy()
        for a, (i, j) in enumerate(support):
            nxt[i, j] = cur[i, j] + delta[a]
        if np.any(nxt < 0) or np.any(nxt.sum(axis=1) <= 0):
            break
        res = max(problem.optimality_residuals(nxt)[1:])
        if not math.isfinite(res) or res >= best_res:
            break
        cur = nxt
        best, best_res = nxt, res
    return best


def equilibrium_solve(problem: SoftPenaltyProblem, tol: float = 1e-9,
                      max_iters: int = 100_000) -> EquilibriumPoint:
    """Spectral projected gradient ascent on y >= 0 (the penalty replaces capacities)."""
    i_count, j_count = problem.num_classes, problem.num_servers
    start = min(p.capacity for p in problem.penalties) / (2.0 * max(i_count, 1))
    y = np.full((i_count, j_count), max(start, 1e-6))
    f_y = problem.objective(y)
    while not math.isfinite(f_y):
        y *= 0.25
        f_y = problem.objective(y)

    def grad_at(point):
        rows = point.sum(axis=1)
        return problem.utility_scales[:, None] / rows[:, None] \
            - problem.prices(point.sum(axis=0))[None, :] - problem.marginal_costs

    g = grad_at(y)
    step = 0.1
    recent = [f_y]
    best_y, best_res = y, math.inf

    stalled = False
    for it in range(1, max_iters + 1):
        if it % 10 == 0 or stalled:
            y_snap = _snap_zeros(problem, y)
            res = max(problem.optimality_residuals(y_snap)[1:])
            if res < best_res:
                best_y, best_res = y_snap, res
            if res <= tol or stalled:
                break
        cand = np.maximum(y + step * g, 0.0)
        direction = cand - y
        slope = float((g * direction).sum())
        if slope <= 0:
            stalled = slope == 0.0 or step <= 1e-13
            step = max(step * 0.5, 1e-14)
            continue
        f_ref = max(recent)
        t = 1.0
        f_new = problem.objective(y + direction)
        for _ in range(60):
            if f_new >= f_ref + 1e-4 * t * slope:
                break
            t *= 0.5
            f_new = problem.objective(y + t * direction)
        y_new = y + t * direction
        g_new = grad_at(y_new)
        dy = y_new - y
        dg = g_new - g
        denom = -float((dy * dg).sum())
        if denom > 1e-300:
            step = min(max(float((dy * dy).sum()) / denom, 1e-12), 1e6)
        else:
            step *= 2.0
        y, g, f_y = y_new, g_new, f_new
        recent.append(f_y)
        if len(recent) > 10:
            recent.pop(0)

    y = best_y
    res = best_res
    if res > tol:
        raise RuntimeError(f"no convergence within budget (residual {res:.3g})")
    rows = y.sum(axis=1)
    cols = y.sum(axis=0)
    prices = problem.prices(cols)
    slack = prices[None, :] + problem.marginal_costs \
        - problem.utility_scales[:, None] / np.maximum(rows, 1e-300)[:, None]
    interior = bool(np.all((y > 1e-6) | (slack > 1e-6)))
    return EquilibriumPoint(y=y, row_totals=rows, col_totals=cols,
                            residual=res, interior=interior)


@dataclass
class DelayedDynamics:
    """Delayed projected-gradient iteration run by job nodes or server nodes.

    Delays are integer ticks: ``forward_delays[i, j]`` is the job-to-server
    direction, ``backward_delays[i, j]`` the reverse; their sum is the
    round-trip delay of the pair.  Estimated rewards stay frozen while the
    dynamics run.
    """

    problem: SoftPenaltyProblem
    step_sizes: np.ndarray          # alpha_ij > 0
    forward_delays: np.ndarray      # tau_{i -> j}, integer ticks >= 0
    backward_delays: np.ndarray     # tau_{j -> i}, integer ticks >= 0
    mode: str = "job"

    def __post_init__(self):
        shape = (self.problem.num_classes, self.problem.num_servers)
        self.step_sizes = np.broadcast_to(np.asarray(self.step_sizes, dtype=float),
                                          shape).copy()
        self.forward_delays = np.broadcast_to(np.asarray(self.forward_delays, dtype=int),
                                              shape).copy()
        self.backward_delays = np.broadcast_to(np.asarray(self.backward_delays, dtype=int),
                                               shape).copy()
        if self.mode not in ("job", "server"):
            raise ValueError("mode must be 'job' or 'server'")
        if np.any(self.step_sizes <= 0):
            raise ValueError("step sizes must be positive")
        if np.any(self.forward_delays < 0) or np.any(self.backward_delays < 0):
            raise ValueError("delays must be nonnegative")

    @property
    def round_trip_delays(self) -> np.ndarray:
        return self.forward_delays + self.backward_delays

    @property
    def max_delay(self) -> int:
        """History depth needed by the delayed aggregates.

        Aggregates mix one pair's feedback delay with another pair's forward
        delay, so the worst lookback is max forward plus max backward delay.
        """
        fwd = int(self.forward_delays.max(initial=0))
        bwd = int(self.backward_delays.max(initial=0))
        return fwd + bwd


def simulate_dynamics(dynamics: DelayedDynamics, initial: np.ndarray, ticks: int) -> np.ndarray:
    """Iterate the delayed updates for ``ticks`` ticks.

    ``initial`` is either one matrix (a constant pre-history) or a stack of
    ``max_delay + 1`` matrices filling ticks -max_delay..0.  Returns the
    trajectory of allocations, shape (ticks + 1, I, J), for ticks 0..R.
    """
    if ticks < 1:
        raise ValueError("at least one tick required")
    problem = dynamics.problem
    i_count, j_count = problem.num_classes, problem.num_servers
    depth = dynamics.max_delay
    hist = np.empty((depth + 1 + ticks, i_count, j_count))
    initial = np.asarray(initial, dtype=float)
    if initial.shape == (i_count, j_count):
        hist[:depth + 1] = initial
    elif initial.shape == (depth + 1, i_count, j_count):
        hist[:depth + 1] = initial
    else:
        raise ValueError("initial trajectory must be one matrix or a (max_delay + 1)-stack")
    if np.any(hist[:depth + 1] < 0):
        raise ValueError("initial trajectory must be nonnegative")

    wq = problem.utility_scales
    costs = problem.marginal_costs
    alpha = dynamics.step_sizes
    fwd = dynamics.forward_delays
    bwd = dynamics.backward_delays
    rt = dynamics.round_trip_delays
    base = depth  # index of tick 0
    ii = np.arange(i_count)
    jj = np.arange(j_count)

    if dynamics.mode == "job":
        # lambda_ij(r) sees server j's total with feedback delay tau_{j,i};
        # that total itself aggregates forward-delayed contributions, so the
        # lookback for entry (i, j, i2) is bwd[i, j] + fwd[i2, j].
        lag_col = bwd[:, :, None] + fwd.T[None, :, :]          # (I, J, I2)
        src_i = np.broadcast_to(ii[None, None, :], lag_col.shape)
        src_j = np.broadcast_to(jj[None, :, None], lag_col.shape)
        lag_row = rt                                           # (I, J2) for y_dag
        row_i = np.broadcast_to(ii[:, None], rt.shape)
        row_j = np.broadcast_to(jj[None, :], rt.shape)
    else:
        # Server nodes price on round-trip-acknowledged totals and evaluate
        # marginal utility at forward-delayed, feedback-aggregated rows.
        lag_col = rt                                            # (I2, J)
        src_i = np.broadcast_to(ii[:, None], rt.shape)
        src_j = np.broadcast_to(jj[None, :], rt.shape)
        lag_row = fwd[:, :, None] + bwd[:, None, :]             # (I, J, J2)
        row_i = np.broadcast_to(ii[:, None, None], lag_row.shape)
        row_j = np.broadcast_to(jj[None, None, :], lag_row.shape)

    for r in range(ticks):
        now = base + r
        cur = hist[now]
        if dynamics.mode == "job":
            col_views = hist[now - lag_col, src_i, src_j].sum(axis=2)   # (I, J)
            prices = np.array([[problem.penalties[j].price(col_views[i, j])
                                for j in range(j_count)] for i in range(i_count)])
            lam = prices + costs
            agg_rows = hist[now - lag_row, row_i, row_j].sum(axis=1)    # (I,)
            inner = 1.0 - lam * (agg_rows / wq)[:, None]
        else:
            col_tot = hist[now - lag_col, src_i, src_j].sum(axis=0)     # (J,)
            prices = np.array([problem.penalties[j].price(col_tot[j]) for j in range(j_count)])
            lam = prices[None, :] + costs
            rows_delayed = hist[now - lag_row, row_i, row_j].sum(axis=2)  # (I, J)
            inner = 1.0 - lam * rows_delayed / wq[:, None]
        nxt = np.maximum(cur + alpha * inner, 0.0)
        if not np.all(np.isfinite(nxt)):
            raise RuntimeError(f"non-finite iterate at tick {r + 1}")
        hist[now + 1] = nxt
    return hist[base:]


@dataclass(frozen=True)
class StabilityReport:
    """Per-pair stability margins against the delayed-dynamics criterion."""

    margins: np.ndarray                 # alpha * tau * (1 + p' z / (p + cost))
    stable: bool                        # max margin < pi / 2
    general_thresholds: np.ndarray      # per-pair bound on alpha * tau, actual costs
    conservative_thresholds: np.ndarray  # same with the cost term zeroed
    specialized_thresholds: np.ndarray  # closed form per penalty kind, one per server


def stability_check(dynamics: DelayedDynamics, equilibrium: EquilibriumPoint) -> StabilityReport:
    """Evaluate the sufficient local-convergence condition at an equilibrium.

    The condition is sufficient only: no divergence claim is made when it
    fails.  Requires an interior equilibrium.
    """
    if not equilibrium.interior:
        raise ValueError("stability condition applies only at interior equilibria")
    problem = dynamics.problem
    cols = equilibrium.col_totals
    costs = problem.marginal_costs
    i_count, j_count = problem.num_classes, problem.num_servers
    margins = np.zeros((i_count, j_count))
    general = np.zeros((i_count, j_count))
    conservative = np.zeros((i_count, j_count))
    specialized = np.zeros(j_count)
    rt = dynamics.round_trip_delays
    alpha = dynamics.step_sizes
    cost_floor = float(costs.min(initial=0.0)) if costs.size else 0.0

    for j, pen in enumerate(problem.penalties):
        z = float(cols[j])
        p = pen.price(z)
        dp = pen.price_derivative(z)
        curvature = dp * z
        for i in range(i_count):
            denom = p + costs[i, j]
            ratio = curvature / denom if denom > 0 else (0.0 if curvature == 0 else math.inf)
            margins[i, j] = alpha[i, j] * rt[i, j] * (1.0 + ratio)
            general[i, j] = (math.pi / 2.0) / (1.0 + ratio)
            ratio0 = curvature / p if p > 0 else (0.0 if curvature == 0 else math.inf)
            conservative[i, j] = (math.pi / 2.0) / (1.0 + ratio0)
        if pen.kind == "power":
            specialized[j] = (math.pi / 2.0) / (1.0 + pen.exponent)
        elif pen.kind == "bounded":
            specialized[j] = (math.pi / 2.0) * (pen.ceiling + cost_floor) / \
                (pen.ceiling + pen.ceiling * pen.exponent + cost_floor)
        else:
            eps = 1.0 - z / pen.capacity
            if eps <= 0:
                raise ValueError("rational penalty threshold needs col total below capacity")
            specialized[j] = (math.pi / 4.0) * eps
    return StabilityReport(margins=margins, stable=bool(margins.max(initial=0.0) < math.pi / 2.0),
                           general_thresholds=general,
                           conservative_thresholds=conservative,
                           specialized_thresholds=specialized)
