"""Oracle assignment LP and the regret reference value.

With known mean rewards and traffic intensities, the best stationary
fractional assignment solves

    max sum_ij r_ij rho_i p_ij
    s.t. sum_i rho_i p_ij <= n_j,  sum_j p_ij = 1,  p >= 0.

The substitution z_ij = rho_i p_ij turns this into a transportation LP
(row sums fixed, column sums capped), solved here by a dense two-phase
primal simplex with Bland's anti-cycling rule.  Instances are tiny and
exactness matters for regret accounting, so no external solver is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["OracleProblem", "OracleSolution", "solve_oracle", "regret_reference"]

_PIVOT_TOL = 1e-11


@dataclass(frozen=True)
class OracleProblem:
    """Known-parameter assignment instance: intensities, capacities, mean rewards."""

    intensities: np.ndarray   # rho_i > 0
    capacities: np.ndarray    # n_j > 0
    rewards: np.ndarray       # r_ij in [-a, a]

    def __post_init__(self):
        rho = np.asarray(self.intensities, dtype=float)
        n = np.asarray(self.capacities, dtype=float)
        r = np.asarray(self.rewards, dtype=float)
        object.__setattr__(self, "intensities", rho)
        object.__setattr__(self, "capacities", n)
        object.__setattr__(self, "rewards", r)
        if rho.ndim != 1 or n.ndim != 1 or r.shape != (rho.shape[0], n.shape[0]):
            raise ValueError("rewards must be an (num intensities x num capacities) matrix")
        if np.any(rho <= 0) or np.any(n <= 0):
            raise ValueError("intensities and capacities must be positive")
        if rho.sum() > n.sum() + 1e-12:
            raise ValueError(f"infeasible: total intensity {rho.sum():.6g} exceeds "
                             f"total capacity {n.sum():.6g}")


@dataclass(frozen=True)
class OracleSolution:
    """Optimal fractional assignment with a dual certificate."""

    p: np.ndarray              # row-stochastic assignment fractions
    value: float               # sum_ij r_ij rho_i p_ij
    row_potentials: np.ndarray
    server_prices: np.ndarray  # >= 0
    duality_gap: float


class _Unbounded(RuntimeError):
    pass


def _pivot(tableau, basis, row, col):
    tableau[row] /= tableau[row, col]
    for r in range(tableau.shape[0]):
        if r != row and abs(tableau[r, col]) > 0.0:
            tableau[r] -= tableau[r, col] * tableau[row]
    basis[row] = col


def _simplex_max(tableau, basis, costs, allowed):
    """Run primal simplex (maximization) on a tableau in basic feasible form.

    ``tableau`` is (m, n+1) holding B^-1 [A | b]; ``basis`` the basic column
    per row; ``allowed`` marks columns eligible to enter.  Bland's rule:
    lowest eligible column index enters, lowest basic index leaves on ties.
    """
    m = tableau.shape[0]
    while True:
        multipliers = costs[basis] @ tableau[:, :-1]
        reduced = costs - multipliers
        entering = -1
        for j in range(costs.shape[0]):
            if allowed[j] and j not in basis and reduced[j] > _PIVOT_TOL:
                entering = j
                break
        if entering < 0:
            return
        col = tableau[:, entering]
        best_row, best_ratio = -1, math.inf
        for r in range(m):
            if col[r] > _PIVOT_TOL:
                ratio = tableau[r, -1] / col[r]
                if ratio < best_ratio - 1e-15 or \
                        (abs(ratio - best_ratio) <= 1e-15 and
                         (best_row < 0 or basis[r] < basis[best_row])):
                    best_row, best_ratio = r, ratio
        if best_row < 0:
            raise _Unbounded("objective unbounded above")
        _pivot(tableau, basis, best_row, entering)


def solve_oracle(problem: OracleProblem) -> OracleSolution:
    """Solve the oracle LP to optimality with a verified duality gap.

    Standard form uses z_ij = rho_i p_ij plus one slack per capacity row;
    phase 1 drives artificials off the row-sum equalities, phase 2
    maximizes reward.  Duals are recovered from the final basis.
    """
    rho = problem.intensities
    n_cap = problem.capacities
    r = problem.rewards
    num_i, num_j = r.shape
    nz = num_i * num_j
    nvars = nz + num_j                       # z variables then capacity slacks
    m = num_i + num_j

    A = np.zeros((m, nvars))
    b = np.concatenate([rho, n_cap])
    for i in range(num_i):
        A[i, i * num_j:(i + 1) * num_j] = 1.0
    for j in range(num_j):
        A[num_i + j, j:nz:num_j] = 1.0
        A[num_i + j, nz + j] = 1.0

    # Phase 1: artificials on the equality rows; slacks start basic on capacity rows.
    art = np.arange(nvars, nvars + num_i)
    tableau = np.hstack([A, np.zeros((m, num_i)), b[:, None]])
    for k in range(num_i):
        tableau[k, nvars + k] = 1.0
    basis = [nvars + k for k in range(num_i)] + [nz + j for j in range(num_j)]
    phase1_costs = np.zeros(nvars + num_i)
    phase1_costs[art] = -1.0
    allowed = np.ones(nvars + num_i, dtype=bool)
    _simplex_max(tableau, basis, phase1_costs, allowed)
    infeas = -float(phase1_costs[basis] @ tableau[:, -1])
    if infeas > 1e-9:
        raise ValueError(f"infeasible oracle problem (phase-1 residual {infeas:.3g})")
    # Pivot any degenerate artificial out of the basis, dropping redundant rows.
    keep = np.ones(m, dtype=bool)
    for row in range(m):
        if basis[row] >= nvars:
            pivot_col = next((j for j in range(nvars) if abs(tableau[row, j]) > _PIVOT_TOL), None)
            if pivot_col is None:
                keep[row] = False
            else:
                _pivot(tableau, basis, row, pivot_col)
    tableau = tableau[keep][:, list(range(nvars)) + [nvars + num_i]]
    basis = [bv for bv, k in zip(basis, keep) if k]

    phase2_costs = np.concatenate([r.reshape(-1), np.zeros(num_j)])
    allowed2 = np.ones(nvars, dtype=bool)
    _simplex_max(tableau, basis, phase2_costs, allowed2)

    x = np.zeros(nvars)
    for row, bv in enumerate(basis):
        x[bv] = tableau[row, -1]
    z = np.maximum(x[:nz].reshape(num_i, num_j), 0.0)
    p = z / rho[:, None]
    value = float((r * z).sum())

    # Dual certificate from the final basis: solve B' y = c_B on original columns.
    basis_cols = A[:, basis] if len(basis) == m else None
    if basis_cols is None:
        # Redundant rows were dropped; rebuild the reduced system.
        rows = np.nonzero(keep)[0]
        basis_cols = A[np.ix_(rows, basis)]
        duals_reduced = np.linalg.solve(basis_cols.T, phase2_costs[basis])
        duals = np.zeros(m)
        duals[rows] = duals_reduced
    else:
        duals = np.linalg.solve(basis_cols.T, phase2_costs[basis])
    row_pot = duals[:num_i]
    prices = np.maximum(duals[num_i:], 0.0)
    gap = abs(float(b @ duals) - value)
    return OracleSolution(p=p, value=value, row_potentials=row_pot,
                          server_prices=prices, duality_gap=gap)


def regret_reference(solution: OracleSolution, horizon: int) -> float:
    """Total oracle reward over a horizon: the regret baseline T * value."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    return horizon * solution.value
