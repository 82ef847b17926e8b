"""Queue scheduling with learned bilinear assignment rewards.

A discrete-time multi-class queueing simulator plus the optimization and
learning machinery it is built from: a weighted proportionally fair
allocation solver with marginal assignment costs, a ridge-regression
bandit estimator with optimistic reward indices, an oracle assignment LP
for regret accounting, delayed distributed allocation dynamics, and a
cluster-trace experiment pipeline.
"""

from bilisched.model import (
    BilinearEnvironment,
    JobClassSpec,
    NoiseSpec,
    RewardTableEnvironment,
    Scenario,
    ServerClassSpec,
    SystemConfig,
    TheoremBounds,
    mean_reward,
    random_scenario,
    recommended_V,
    sample_reward,
    theorem_bounds,
    vectorize_outer,
)
from bilisched.allocation import Allocation, AllocationProblem, closed_form_single_server, kkt_residual, solve
from bilisched.estimator import ConfidenceParams, RegularizedDesign, SwitchState, beta, truncated_estimate, ucb_index
from bilisched.oracle import OracleProblem, OracleSolution, regret_reference, solve_oracle
from bilisched.simulation import MetricsLog, SimState, run
from bilisched.distributed import DelayedDynamics, EquilibriumPoint, PenaltySpec, equilibrium_solve, simulate_dynamics, stability_check

__all__ = [
    "Allocation",
    "AllocationProblem",
    "BilinearEnvironment",
    "ConfidenceParams",
    "DelayedDynamics",
    "EquilibriumPoint",
    "JobClassSpec",
    "MetricsLog",
    "NoiseSpec",
    "OracleProblem",
    "OracleSolution",
    "PenaltySpec",
    "RegularizedDesign",
    "RewardTableEnvironment",
    "Scenario",
    "ServerClassSpec",
    "SimState",
    "SwitchState",
    "SystemConfig",
    "TheoremBounds",
    "beta",
    "closed_form_single_server",
    "equilibrium_solve",
    "kkt_residual",
    "mean_reward",
    "random_scenario",
    "recommended_V",
    "regret_reference",
    "run",
    "sample_reward",
    "simulate_dynamics",
    "solve",
    "solve_oracle",
    "stability_check",
    "theorem_bounds",
    "truncated_estimate",
    "ucb_index",
    "vectorize_outer",
]
