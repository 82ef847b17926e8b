"""Discrete-time scheduling loop: arrivals, allocation, assignment, learning, departures.

Each step solves the expected-allocation program for the classes with
waiting jobs, realizes it through independent per-slot randomized
selections (a job may be picked by several slots), observes one stochastic
reward per assignment, feeds the learner, runs geometric service trials,
and finally draws the next step's arrival.  Policies differ only in how
they produce reward estimates and at what granularity they allocate.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from bilisched.allocation import AllocationProblem, solve
from bilisched.estimator import ConfidenceParams, RegularizedDesign, SwitchState, beta, maybe_refresh
from bilisched.model import Scenario, recommended_V, with_weights
from bilisched.oracle import OracleProblem, solve_oracle

__all__ = [
    "POLICIES",
    "AssignmentRecord",
    "MetricsLog",
    "SimState",
    "arrivals",
    "departures",
    "make_policy",
    "randomized_allocation",
    "run",
    "step",
    "time_varying_capacity",
]

POLICIES = ("sabr", "w-sabr", "switching-sabr", "oracle", "no-learning", "per-job-ucb")


@dataclass(frozen=True)
class AssignmentRecord:
    """Outcome of one service slot in one step; idle slots carry no job."""

    step: int
    server_class: int
    slot: int
    job_id: Optional[int]
    job_class: Optional[int]
    reward: float = math.nan


@dataclass
class MetricsLog:
    """Per-step series of one simulation run plus its regret accounting.

    The regret series uses expected allocations and true mean rewards (the
    realized reward sum is kept separately); increments may be negative.
    """

    policy: str
    seed: int
    oracle_value: float
    queue_lengths: np.ndarray    # (T, I): Q_i(t) at decision time
    arrivals: np.ndarray         # (T, I): A_i(t+1)
    departures: np.ndarray       # (T, I): D_i(t)
    expected_reward: np.ndarray  # (T,): sum_ij r_ij y_ij(t) under true means
    realized_reward: np.ndarray  # (T,): sum of observed rewards
    holding_cost: np.ndarray     # (T,): sum_i c_i Q_i(t)
    kkt_residual: np.ndarray     # (T,)
    refresh_count: np.ndarray    # (T,): cumulative estimator refreshes
    V: float = math.nan

    @property
    def horizon(self) -> int:
        return self.queue_lengths.shape[0]

    @property
    def total_queue(self) -> np.ndarray:
        return self.queue_lengths.sum(axis=1)

    @property
    def cumulative_expected_reward(self) -> np.ndarray:
        return np.cumsum(self.expected_reward)

    @property
    def regret(self) -> np.ndarray:
        t = np.arange(1, self.horizon + 1)
        return t * self.oracle_value - self.cumulative_expected_reward

    def to_csv(self, path) -> None:
        """One row per step; column order is part of the file contract."""
        i_count = self.queue_lengths.shape[1] if self.horizon else 0
        header = ["t", "total_queue", "holding_cost", "expected_reward", "realized_reward",
                  "cum_expected_reward", "regret", "kkt_residual", "refresh_count",
                  "arrivals_total", "departures_total"]
        header += [f"q_{i}" for i in range(i_count)]
        header += [f"a_{i}" for i in range(i_count)]
        header += [f"d_{i}" for i in range(i_count)]
        cum = self.cumulative_expected_reward
        reg = self.regret
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for k in range(self.horizon):
                row = [k + 1, int(self.total_queue[k]), repr(float(self.holding_cost[k])),
                       repr(float(self.expected_reward[k])), repr(float(self.realized_reward[k])),
                       repr(float(cum[k])), repr(float(reg[k])),
                       repr(float(self.kkt_residual[k])), int(self.refresh_count[k]),
                       int(self.arrivals[k].sum()), int(self.departures[k].sum())]
                row += [int(v) for v in self.queue_lengths[k]]
                row += [int(v) for v in self.arrivals[k]]
                row += [int(v) for v in self.departures[k]]
                writer.writerow(row)


class SimState:
    """Mutable run state: clock, queues, RNG stream, and warm-start cache."""

    def __init__(self, scenario: Scenario, rng: np.random.Generator):
        self.scenario = scenario
        self.rng = rng
        self.t = 0
        self.V = math.nan
        self.queues: List[List[int]] = [[] for _ in scenario.job_classes]
        self.job_class: Dict[int, int] = {}
        self._next_job_id = 0
        self.last_allocation: Dict[tuple, float] = {}
        self.true_rewards = scenario.mean_rewards()

    def admit(self, cls: int) -> int:
        job_id = self._next_job_id
        self._next_job_id += 1
        self.queues[cls].append(job_id)
        self.job_class[job_id] = cls
        return job_id

    def remove(self, job_id: int) -> None:
        cls = self.job_class.pop(job_id)
        self.queues[cls].remove(job_id)

    def queue_lengths(self) -> np.ndarray:
        return np.array([len(q) for q in self.queues], dtype=int)

    def active_classes(self) -> List[int]:
        return [i for i, q in enumerate(self.queues) if q]


def time_varying_capacity(scenario: Scenario, t: int) -> np.ndarray:
    """Active per-class capacities at step t; errors when all are zero."""
    return scenario.capacities_at(t)


def arrivals(state: SimState, rng: np.random.Generator) -> np.ndarray:
    """Draw at most one arriving job; returns the per-class arrival counts."""
    counts = np.zeros(state.scenario.num_job_classes, dtype=int)
    rates = np.array([c.arrival_rate for c in state.scenario.job_classes])
    edges = np.cumsum(rates)
    u = rng.uniform()
    if u < edges[-1]:
        cls = int(np.searchsorted(edges, u, side="right"))
        state.admit(cls)
        counts[cls] = 1
    return counts


def randomized_allocation(y: np.ndarray, groups: Sequence[Sequence[int]],
                          capacities: np.ndarray, job_class: Dict[int, int],
                          rng: np.random.Generator, t: int) -> List[AssignmentRecord]:
    """Realize an expected allocation through independent per-slot selections.

    ``groups[g]`` lists the job ids sharing allocation row ``g``; each of the
    ``n_j`` slots of server class ``j`` independently selects a specific job
    of group ``g`` with probability ``y[g, j] / (n_j * len(groups[g]))`` and
    otherwise stays idle.  The same job may be selected by several slots.
    """
    records: List[AssignmentRecord] = []
    for j, n_j in enumerate(capacities):
        if n_j == 0:
            continue
        group_mass = y[:, j] / n_j if len(groups) else np.zeros(0)
        total = float(group_mass.sum())
        if total > 1.0 + 1e-9:
            raise ValueError(f"per-slot selection mass {total:.12g} exceeds 1 for server class {j}")
        edges = np.cumsum(group_mass)
        for slot in range(int(n_j)):
            u = rng.uniform()
            if u >= min(total, 1.0):
                records.append(AssignmentRecord(t, j, slot, None, None))
                continue
            g = min(int(np.searchsorted(edges, u, side="right")), len(groups) - 1)
            members = groups[g]
            job = members[int(rng.integers(len(members)))] if len(members) > 1 else members[0]
            records.append(AssignmentRecord(t, j, slot, job, job_class[job]))
    return records


def departures(records: Sequence[AssignmentRecord], state: SimState,
               rng: np.random.Generator) -> List[Tuple[int, int]]:
    """Geometric service trials: one Bernoulli(mu) draw per assignment.

    A job departs at the end of the step iff at least one of its trials
    succeeds; unassigned jobs never depart.  Returns (job id, class) pairs.
    """
    rates = [c.service_rate for c in state.scenario.job_classes]
    departed: List[Tuple[int, int]] = []
    done = set()
    for rec in records:
        if rec.job_id is None:
            continue
        success = rng.uniform() < rates[rec.job_class]
        if success and rec.job_id not in done:
            done.add(rec.job_id)
            departed.append((rec.job_id, rec.job_class))
    for job_id, _ in departed:
        state.remove(job_id)
    return departed


# -- policies -----------------------------------------------------------------


class _BasePolicy:
    """Shared plumbing: class-level allocation rows over the active classes."""

    learns = False

    def __init__(self, scenario: Scenario, weights: np.ndarray):
        self.scenario = scenario
        self.weights = weights
        self.refresh_count = 0

    def rows(self, state: SimState, active: List[int]):
        groups = [state.queues[i] for i in active]
        q_row = np.array([len(state.queues[i]) for i in active], dtype=float)
        w_row = self.weights[active]
        return groups, q_row, w_row, list(active)

    def estimates(self, state: SimState, active: List[int], t: int) -> np.ndarray:
        raise NotImplementedError

    def observe(self, records: Sequence[AssignmentRecord]) -> None:
        pass

    def forget_jobs(self, job_ids: Sequence[int]) -> None:
        pass


class FixedEstimatePolicy(_BasePolicy):
    """No learning: reward estimates are a frozen matrix (true means or zeros)."""

    def __init__(self, scenario: Scenario, weights: np.ndarray, r_hat: np.ndarray):
        super().__init__(scenario, weights)
        bound = scenario.reward_bound
        self.r_hat = np.clip(r_hat, -bound, bound)

    def estimates(self, state: SimState, active: List[int], t: int) -> np.ndarray:
        return self.r_hat[active]


class SabrPolicy(_BasePolicy):
    """Optimistic bilinear-reward learner shared across all jobs of a class."""

    learns = True

    def __init__(self, scenario: Scenario, weights: np.ndarray, switch_threshold: float = 0.0):
        super().__init__(scenario, weights)
        dim = scenario.job_classes[0].feature.shape[0] ** 2
        zeta = scenario.zeta
        self.design = RegularizedDesign(dim, zeta)
        kappa = scenario.env.noise.scale if hasattr(scenario.env, "noise") else 0.0
        self.params = ConfidenceParams(kappa=kappa, horizon=max(1, scenario.config.horizon),
                                       zeta=zeta, dim=dim)
        self.pair_features = scenario.feature_pairs()
        self.switch = SwitchState(switch_threshold) if switch_threshold > 0 else None
        self.bound = scenario.reward_bound

    def estimates(self, state: SimState, active: List[int], t: int) -> np.ndarray:
        if self.switch is not None:
            indices = maybe_refresh(self.switch, self.design, self.params,
                                    self.pair_features, t)
            self.refresh_count = self.switch.refresh_count
            raw = indices[active]
        else:
            # Plain mode recomputes every step, but only for waiting classes.
            theta = self.design.theta_hat()
            b = beta(self.params, t)
            flat = self.pair_features[active].reshape(-1, self.design.dim)
            widths = np.einsum("ki,ij,kj->k", flat, self.design.inv_lambda, flat)
            raw = (flat @ theta + np.sqrt(np.maximum(widths, 0.0) * b)).reshape(
                len(active), -1)
            self.refresh_count += 1
        return np.clip(raw, -self.bound, self.bound)

    def observe(self, records: Sequence[AssignmentRecord]) -> None:
        for rec in records:
            if rec.job_id is None:
                continue
            self.design.update(self.pair_features[rec.job_class, rec.server_class], rec.reward)


class PerJobUcbPolicy(_BasePolicy):
    """Independent per-(job, server class) sample means with a UCB bonus.

    Approximates utility-guided per-job learning baselines: nothing learned
    for one job transfers to any other, so every arrival starts cold at the
    uninformed mean of zero until its own observations arrive.  Allocation
    runs at job granularity through the same program.
    """

    learns = True

    def __init__(self, scenario: Scenario, weights: np.ndarray):
        super().__init__(scenario, weights)
        self.counts: Dict[int, np.ndarray] = {}
        self.means: Dict[int, np.ndarray] = {}
        self.bound = scenario.reward_bound

    def rows(self, state: SimState, active: List[int]):
        groups, w_row, row_keys = [], [], []
        for i in active:
            for job in state.queues[i]:
                groups.append([job])
                w_row.append(self.weights[i])
                row_keys.append(job)
        return groups, np.ones(len(groups)), np.array(w_row), row_keys

    def estimates(self, state: SimState, active: List[int], t: int) -> np.ndarray:
        j_count = self.scenario.num_server_classes
        rows = []
        for i in active:
            for job in state.queues[i]:
                counts = self.counts.get(job)
                if counts is None:
                    rows.append(np.zeros(j_count))
                    continue
                bonus = np.sqrt(2.0 * math.log(max(t, 2)) / np.maximum(counts, 1.0))
                idx = np.where(counts > 0, self.means[job] + bonus, 0.0)
                rows.append(np.clip(idx, -self.bound, self.bound))
        return np.array(rows) if rows else np.zeros((0, j_count))

    def observe(self, records: Sequence[AssignmentRecord]) -> None:
        j_count = self.scenario.num_server_classes
        for rec in records:
            if rec.job_id is None:
                continue
            if rec.job_id not in self.counts:
                self.counts[rec.job_id] = np.zeros(j_count)
                self.means[rec.job_id] = np.zeros(j_count)
            c = self.counts[rec.job_id]
            m = self.means[rec.job_id]
            c[rec.server_class] += 1
            m[rec.server_class] += (rec.reward - m[rec.server_class]) / c[rec.server_class]

    def forget_jobs(self, job_ids: Sequence[int]) -> None:
        for job_id in job_ids:
            self.counts.pop(job_id, None)
            self.means.pop(job_id, None)


def make_policy(name: str, scenario: Scenario):
    ones = np.ones(scenario.num_job_classes)
    scenario_weights = np.array([c.weight for c in scenario.job_classes])
    if name == "sabr":
        return SabrPolicy(scenario, ones)
    if name == "w-sabr":
        return SabrPolicy(scenario, scenario_weights)
    if name == "switching-sabr":
        c = scenario.config.switch_threshold
        if c <= 0:
            raise ValueError("switching-sabr requires a positive switch threshold")
        return SabrPolicy(scenario, ones, switch_threshold=c)
    if name == "oracle":
        return FixedEstimatePolicy(scenario, ones, scenario.mean_rewards())
    if name == "no-learning":
        return FixedEstimatePolicy(scenario, ones,
                                   np.zeros((scenario.num_job_classes,
                                             scenario.num_server_classes)))
    if name == "per-job-ucb":
        return PerJobUcbPolicy(scenario, ones)
    raise ValueError(f"unknown policy {name!r}; choose one of {POLICIES}")


# -- the step and run loop ------------------------------------------------------


@dataclass
class StepOutcome:
    expected_reward: float
    realized_reward: float
    kkt_residual: float
    class_allocation: np.ndarray
    assignments: List[AssignmentRecord]
    departed: List[Tuple[int, int]]
    arrived: np.ndarray


def step(state: SimState, policy, solver_tol: float = 1e-8) -> StepOutcome:
    """Advance one time step; the event order is fixed and part of the semantics.

    (1) refresh reward estimates, (2) solve the allocation program over the
    waiting classes, (3) randomized per-slot assignment, (4) observe one
    reward per assignment, (5) learner updates, (6) service trials and
    departures, (7) the next step's arrival draw.
    """
    scenario = state.scenario
    state.t += 1
    t = state.t
    rng = state.rng
    active = state.active_classes()
    caps = scenario.capacities_at(t)
    i_count = scenario.num_job_classes
    j_count = scenario.num_server_classes
    class_alloc = np.zeros((i_count, j_count))
    expected = realized = residual = 0.0
    records: List[AssignmentRecord] = []
    departed: List[Tuple[int, int]] = []

    if active:
        r_hat = policy.estimates(state, active, t)
        groups, q_row, w_row, row_keys = policy.rows(state, active)
        problem = AllocationProblem(
            weights=w_row, queue_lengths=q_row, r_hat=r_hat,
            capacities=caps.astype(float), gamma=scenario.config.gamma,
            V=state.V, reward_bound=scenario.reward_bound)
        warm = None
        if state.last_allocation:
            warm = np.array([[state.last_allocation.get((key, j), 0.0)
                              for j in range(j_count)] for key in row_keys])
        result = solve(problem, tol=solver_tol, warm_start=warm)
        residual = result.kkt_residual
        state.last_allocation = {(key, j): float(result.y[g, j])
                                 for g, key in enumerate(row_keys)
                                 for j in range(j_count)}

        records = randomized_allocation(result.y, groups, caps, state.job_class, rng, t)
        records = [rec if rec.job_id is None else
                   replace(rec, reward=scenario.sample_reward(rec.job_class, rec.server_class, rng))
                   for rec in records]
        policy.observe(records)

        for g, group in enumerate(groups):
            class_alloc[state.job_class[group[0]]] += result.y[g]
        expected = float((state.true_rewards * class_alloc).sum())
        realized = float(sum(rec.reward for rec in records if rec.job_id is not None))

        departed = departures(records, state, rng)
        policy.forget_jobs([job for job, _ in departed])

    arrived = arrivals(state, rng)
    return StepOutcome(expected, realized, residual, class_alloc, records, departed, arrived)


def run(scenario: Scenario, policy_name: str = "sabr", horizon: Optional[int] = None,
        seed: Optional[int] = None, solver_tol: float = 1e-8) -> MetricsLog:
    """Simulate one run; bit-identical output for a repeated seed.

    The oracle reference value is solved once over all job classes and the
    full server set, and the regret series follows from the expected
    allocations under true mean rewards.
    """
    T = scenario.config.horizon if horizon is None else horizon
    seed = scenario.config.seed if seed is None else seed
    policy = make_policy(policy_name, scenario)

    i_count = scenario.num_job_classes
    log = MetricsLog(
        policy=policy_name, seed=seed, oracle_value=0.0,
        queue_lengths=np.zeros((T, i_count), dtype=int),
        arrivals=np.zeros((T, i_count), dtype=int),
        departures=np.zeros((T, i_count), dtype=int),
        expected_reward=np.zeros(T), realized_reward=np.zeros(T),
        holding_cost=np.zeros(T), kkt_residual=np.zeros(T),
        refresh_count=np.zeros(T, dtype=int))
    if T == 0:
        return log

    rho = np.array([c.traffic_intensity for c in scenario.job_classes])
    oracle = solve_oracle(OracleProblem(rho, scenario.capacities.astype(float),
                                        scenario.mean_rewards()))
    log.oracle_value = oracle.value

    rng = np.random.default_rng([seed, 0x5EED])
    state = SimState(scenario, rng)
    state.V = _resolve_v(scenario, policy)
    log.V = state.V
    holding = np.array([c.holding_cost for c in scenario.job_classes])

    arrivals(state, rng)  # Q(1) = A(1): the system starts with the first draw
    for k in range(T):
        decision_queues = state.queue_lengths()
        log.queue_lengths[k] = decision_queues
        log.holding_cost[k] = float(holding @ decision_queues)
        outcome = step(state, policy, solver_tol=solver_tol)
        for _, cls in outcome.departed:
            log.departures[k, cls] += 1
        log.arrivals[k] = outcome.arrived
        log.expected_reward[k] = outcome.expected_reward
        log.realized_reward[k] = outcome.realized_reward
        log.kkt_residual[k] = outcome.kkt_residual
        log.refresh_count[k] = policy.refresh_count
    return log


def _resolve_v(scenario: Scenario, policy) -> float:
    if scenario.config.V is not None:
        return scenario.config.V
    return recommended_V(with_weights(scenario, policy.weights))
