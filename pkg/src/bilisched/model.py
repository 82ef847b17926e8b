"""Domain types, reward environments, validation, and closed-form bound calculators.

The system model: jobs of ``I`` classes arrive to queues according to a
Bernoulli process and are served by ``J`` server classes with ``n_j`` service
slots each.  Assigning a class-``i`` job to a class-``j`` server yields a
stochastic reward whose mean is the bilinear form ``u_i' Theta v_j`` of the
class feature vectors.  Everything downstream (allocation program, bandit
estimator, regret accounting) is parameterized by the types defined here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "NoiseSpec",
    "JobClassSpec",
    "ServerClassSpec",
    "CapacitySchedule",
    "BilinearEnvironment",
    "RewardTableEnvironment",
    "SystemConfig",
    "TheoremBounds",
    "Scenario",
    "vectorize_outer",
    "mean_reward",
    "sample_reward",
    "recommended_V",
    "theorem_bounds",
    "random_scenario",
    "load_scenario",
    "save_scenario",
]


@dataclass(frozen=True)
class NoiseSpec:
    """Sub-Gaussian reward-noise law.

    ``gaussian`` draws N(0, scale^2); ``uniform`` draws uniformly from
    [-scale, scale].  Both are sub-Gaussian with parameter ``scale``.
    """

    kind: str = "gaussian"
    scale: float = 0.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.scale < 0:
            raise ValueError("noise scale must be nonnegative")

    def sample(self, rng: np.random.Generator, size=None):
        if self.scale == 0.0:
            return 0.0 if size is None else np.zeros(size)
        if self.kind == "gaussian":
            return rng.normal(0.0, self.scale, size=size)
        return rng.uniform(-self.scale, self.scale, size=size)


@dataclass(frozen=True)
class JobClassSpec:
    """One job class: feature vector, traffic parameters, and priority weights."""

    id: int
    feature: np.ndarray          # length d, ||.||_2 <= sqrt(a)
    arrival_rate: float          # lambda_i, probability per step
    service_rate: float          # mu_i, per-step completion probability
    weight: float = 1.0          # w_i in the fairness objective
    holding_cost: float = 1.0    # c_i in the holding-cost metric

    def __post_init__(self):
        object.__setattr__(self, "feature", np.asarray(self.feature, dtype=float))

    @property
    def traffic_intensity(self) -> float:
        return self.arrival_rate / self.service_rate


@dataclass(frozen=True)
class CapacitySchedule:
    """Per-step capacity for one server class, cyclic over ``pattern``.

    Step ``t`` (1-based) gets capacity ``pattern[(t - 1) % len(pattern)]``.
    A zero entry makes the class inactive at that step.
    """

    pattern: tuple

    def __post_init__(self):
        pat = tuple(int(x) for x in self.pattern)
        if not pat:
            raise ValueError("schedule pattern must be nonempty")
        if any(x < 0 for x in pat):
            raise ValueError("schedule capacities must be nonnegative")
        object.__setattr__(self, "pattern", pat)

    def capacity_at(self, t: int) -> int:
        if t < 1:
            raise ValueError("steps are 1-based")
        return self.pattern[(t - 1) % len(self.pattern)]

    @property
    def min_capacity(self) -> int:
        return min(self.pattern)

    @property
    def max_capacity(self) -> int:
        return max(self.pattern)


@dataclass(frozen=True)
class ServerClassSpec:
    """One server class: feature vector and capacity (fixed or scheduled)."""

    id: int
    feature: np.ndarray          # length d, ||.||_2 <= sqrt(a)
    capacity: int                # n_j >= 1 (base capacity)
    schedule: Optional[CapacitySchedule] = None

    def __post_init__(self):
        object.__setattr__(self, "feature", np.asarray(self.feature, dtype=float))

    def capacity_at(self, t: int) -> int:
        if self.schedule is None:
            return self.capacity
        return self.schedule.capacity_at(t)


def vectorize_outer(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Row-major flattening of the outer product ``u v'``.

    Under the same row-major convention for flattening a parameter matrix,
    ``vectorize_outer(u, v) @ flatten(M) == u @ M @ v``.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError(f"expected two equal-length vectors, got {u.shape} and {v.shape}")
    return np.outer(u, v).reshape(-1)


@dataclass(frozen=True)
class BilinearEnvironment:
    """Hidden bilinear reward model: mean reward of (i, j) is ``u_i' Theta v_j``."""

    theta: np.ndarray            # d x d hidden parameter
    reward_bound: float = 1.0    # a: every mean reward lies in [-a, a]
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim != 2 or theta.shape[0] != theta.shape[1]:
            raise ValueError("theta must be a square matrix")
        object.__setattr__(self, "theta", theta)
        if self.reward_bound <= 0:
            raise ValueError("reward bound must be positive")

    @property
    def dim(self) -> int:
        return self.theta.shape[0]

    @property
    def theta_vec(self) -> np.ndarray:
        """Row-major flattening, matching :func:`vectorize_outer`."""
        return self.theta.reshape(-1)

    def mean_reward(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(np.asarray(u) @ self.theta @ np.asarray(v))


@dataclass(frozen=True)
class RewardTableEnvironment:
    """Tabular reward model: per-(job class, server class) Gaussian cells.

    Used by trace-driven scenarios where rewards come from measured
    efficiency samples rather than the bilinear form; the learner still
    operates on class features.
    """

    means: np.ndarray            # I x J
    variances: np.ndarray        # I x J, >= 0
    reward_bound: float = 1.0

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        variances = np.asarray(self.variances, dtype=float)
        if means.shape != variances.shape or means.ndim != 2:
            raise ValueError("means and variances must be matching 2-D arrays")
        if np.any(variances < 0):
            raise ValueError("variances must be nonnegative")
        if np.any(np.abs(means) > self.reward_bound + 1e-12):
            raise ValueError("table means must lie within [-a, a]")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)


@dataclass(frozen=True)
class SystemConfig:
    """Run-level parameters of the scheduling algorithm."""

    horizon: int                       # T
    gamma: float                       # cost offset, > reward bound
    V: Optional[float] = None          # fairness/penalty trade-off; None -> recommended_V
    zeta: Optional[float] = None       # ridge regularizer; None -> a * n (a * n_max when time-varying)
    seed: int = 0
    switch_threshold: float = 0.0      # C; 0 keeps estimates refreshed every step
    algorithm: str = "sabr"

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if self.V is not None and self.V <= 0:
            raise ValueError("V must be positive")
        if self.zeta is not None and self.zeta <= 0:
            raise ValueError("zeta must be positive")
        if self.switch_threshold < 0:
            raise ValueError("switch threshold must be nonnegative")


@dataclass(frozen=True)
class TheoremBounds:
    """Closed-form regret/queue-bound constants for a validated scenario."""

    alpha1: float
    alpha2: float
    alpha3: float
    alpha4: float
    alpha5: float
    tau1: float
    tau2: float
    queue_bound: float
    recommended_V: float
    cost_ratio: float            # (gamma + a) / (gamma - a)


class Scenario:
    """A validated problem instance: classes, config, and a reward environment.

    Immutable after construction; safe to share read-only across parallel
    runs, each run holding its own RNG stream.
    """

    def __init__(self, job_classes: Sequence[JobClassSpec], server_classes: Sequence[ServerClassSpec],
                 config: SystemConfig, env):
        self.job_classes = tuple(job_classes)
        self.server_classes = tuple(server_classes)
        self.config = config
        self.env = env
        self._validate()
        self._rewards = self._mean_reward_matrix()

    # -- derived quantities ------------------------------------------------

    @property
    def num_job_classes(self) -> int:
        return len(self.job_classes)

    @property
    def num_server_classes(self) -> int:
        return len(self.server_classes)

    @property
    def reward_bound(self) -> float:
        return self.env.reward_bound

    @property
    def arrival_rate(self) -> float:
        return sum(c.arrival_rate for c in self.job_classes)

    @property
    def traffic_intensity(self) -> float:
        return sum(c.traffic_intensity for c in self.job_classes)

    @property
    def capacities(self) -> np.ndarray:
        return np.array([s.capacity for s in self.server_classes], dtype=int)

    @property
    def total_capacity(self) -> int:
        return int(self.capacities.sum())

    @property
    def identical_service_rates(self) -> bool:
        rates = {c.service_rate for c in self.job_classes}
        return len(rates) == 1

    @property
    def time_varying(self) -> bool:
        return any(s.schedule is not None for s in self.server_classes)

    @property
    def min_service_rate(self) -> float:
        return min(c.service_rate for c in self.job_classes)

    def capacities_at(self, t: int) -> np.ndarray:
        """Per-class capacities active at step t; errors if all are zero."""
        caps = np.array([s.capacity_at(t) for s in self.server_classes], dtype=int)
        if caps.sum() == 0:
            raise ValueError(f"no active server capacity at step {t}")
        return caps

    def min_total_capacity(self) -> int:
        if not self.time_varying:
            return self.total_capacity
        period = 1
        for s in self.server_classes:
            if s.schedule is not None:
                period = math.lcm(period, len(s.schedule.pattern))
        return min(int(self.capacities_at(t).sum()) for t in range(1, period + 1))

    def max_total_capacity(self) -> int:
        if not self.time_varying:
            return self.total_capacity
        period = 1
        for s in self.server_classes:
            if s.schedule is not None:
                period = math.lcm(period, len(s.schedule.pattern))
        return max(int(self.capacities_at(t).sum()) for t in range(1, period + 1))

    @property
    def zeta(self) -> float:
        if self.config.zeta is not None:
            return self.config.zeta
        return self.reward_bound * self.max_total_capacity()

    def feature_pairs(self) -> np.ndarray:
        """Stacked pair features: shape (I, J, d^2), row (i, j) flattens u_i v_j'."""
        d = self.job_classes[0].feature.shape[0]
        out = np.empty((self.num_job_classes, self.num_server_classes, d * d))
        for i, jc in enumerate(self.job_classes):
            for j, sc in enumerate(self.server_classes):
                out[i, j] = vectorize_outer(jc.feature, sc.feature)
        return out

    # -- rewards -------------------------------------------------------------

    def _mean_reward_matrix(self) -> np.ndarray:
        if isinstance(self.env, RewardTableEnvironment):
            return self.env.means.copy()
        out = np.empty((self.num_job_classes, self.num_server_classes))
        for i, jc in enumerate(self.job_classes):
            for j, sc in enumerate(self.server_classes):
                out[i, j] = self.env.mean_reward(jc.feature, sc.feature)
        return out

    def mean_rewards(self) -> np.ndarray:
        return self._rewards.copy()

    def mean_reward(self, i: int, j: int) -> float:
        self._check_ids(i, j)
        return float(self._rewards[i, j])

    def sample_reward(self, i: int, j: int, rng: np.random.Generator) -> float:
        self._check_ids(i, j)
        if isinstance(self.env, RewardTableEnvironment):
            std = math.sqrt(float(self.env.variances[i, j]))
            return float(self._rewards[i, j] + (rng.normal(0.0, std) if std > 0 else 0.0))
        return float(self._rewards[i, j]) + float(np.asarray(self.env.noise.sample(rng)))

    def _check_ids(self, i: int, j: int):
        if not (0 <= i < self.num_job_classes and 0 <= j < self.num_server_classes):
            raise ValueError(f"invalid class pair ({i}, {j})")

    # -- validation ----------------------------------------------------------

    def _validate(self):
        if not self.job_classes:
            raise ValueError("at least one job class required")
        if not self.server_classes:
            raise ValueError("at least one server class required")
        a = self.reward_bound
        cfg = self.config
        if cfg.gamma <= a:
            raise ValueError(f"gamma must exceed the reward bound: gamma={cfg.gamma}, a={a}")

        d = self.job_classes[0].feature.shape[0]
        lam = 0.0
        for c in self.job_classes:
            if c.feature.shape != (d,):
                raise ValueError("all feature vectors must share one dimension")
            if np.linalg.norm(c.feature) > math.sqrt(a) + 1e-9:
                raise ValueError(f"job class {c.id} feature norm exceeds sqrt(a)")
            if not (0.0 < c.arrival_rate <= 1.0):
                raise ValueError(f"job class {c.id} arrival rate must be in (0, 1]")
            if not (0.0 < c.service_rate <= 1.0):
                raise ValueError(f"job class {c.id} service rate must be in (0, 1]")
            if c.weight <= 0 or c.holding_cost <= 0:
                raise ValueError(f"job class {c.id} weight and holding cost must be positive")
            lam += c.arrival_rate
        if lam > 1.0 + 1e-12:
            # At most one arrival per step; batch arrivals are rejected, not approximated.
            raise ValueError(f"total arrival rate {lam:.6g} exceeds 1")

        for s in self.server_classes:
            if s.feature.shape != (d,):
                raise ValueError("all feature vectors must share one dimension")
            if np.linalg.norm(s.feature) > math.sqrt(a) + 1e-9:
                raise ValueError(f"server class {s.id} feature norm exceeds sqrt(a)")
            if s.capacity < 1:
                raise ValueError(f"server class {s.id} needs capacity >= 1")

        if isinstance(self.env, BilinearEnvironment):
            if self.env.dim != d:
                raise ValueError("environment dimension does not match features")
            if np.linalg.norm(self.env.theta_vec) > math.sqrt(a) + 1e-9:
                raise ValueError("||vec(Theta)|| exceeds sqrt(a)")
        else:
            if self.env.means.shape != (self.num_job_classes, self.num_server_classes):
                raise ValueError("reward table shape does not match class counts")

        if cfg.horizon > 0:
            n_max = self.max_total_capacity()
            if cfg.horizon < n_max:
                raise ValueError(f"horizon {cfg.horizon} below total capacity {n_max}")
            for c in self.job_classes:
                if c.service_rate < 1.0 / cfg.horizon:
                    raise ValueError(f"job class {c.id} mean service time exceeds the horizon")

        self._check_stability()

    def _check_stability(self):
        rho = self.traffic_intensity
        n_min = self.min_total_capacity()
        if self.identical_service_rates and not self.time_varying:
            if rho / n_min >= 1.0:
                raise ValueError(f"unstable: traffic intensity {rho:.4g} >= capacity {n_min}")
        else:
            lam = self.arrival_rate
            mu_min = self.min_service_rate
            if 2.0 * lam / mu_min - rho >= n_min:
                raise ValueError(
                    f"unstable: 2*lambda/mu_min - rho = {2 * lam / mu_min - rho:.4g} "
                    f">= minimum capacity {n_min}")


def mean_reward(scenario: Scenario, i: int, j: int) -> float:
    """Mean reward of assigning a class-``i`` job to a class-``j`` server."""
    return scenario.mean_reward(i, j)


def sample_reward(scenario: Scenario, i: int, j: int, rng: np.random.Generator) -> float:
    """One stochastic reward draw: mean plus independent noise."""
    return scenario.sample_reward(i, j, rng)


def _alpha_constants(scenario: Scenario):
    cfg = scenario.config
    a = scenario.reward_bound
    gamma = cfg.gamma
    c_ratio = (gamma + a) / (gamma - a)
    n_max = scenario.max_total_capacity()
    n_min = scenario.min_total_capacity()
    rho = scenario.traffic_intensity
    lam = scenario.arrival_rate
    mu_min = scenario.min_service_rate
    # For identical service rates and fixed servers, 2*lam/mu - rho == rho and
    # n_max == n_min, so the general constants reduce to the base-case ones.
    drift_margin = 1.0 - (2.0 * lam / mu_min - rho) / n_min
    alpha1 = gamma ** 2 * n_max
    alpha2 = gamma * c_ratio * n_max ** 2 / drift_margin
    alpha3 = c_ratio ** 2 * n_max ** 2
    alpha4 = a * math.sqrt(n_max)
    alpha5 = a * n_max
    return alpha1, alpha2, alpha3, alpha4, alpha5, c_ratio, n_max, n_min, rho, drift_margin


def recommended_V(scenario: Scenario) -> float:
    """Value of V minimizing the regret bound, for identical service rates.

    Requires knowledge of the weighted minimum traffic intensity
    ``min_i rho_i / w_i``; signals when it vanishes.
    """
    if not scenario.identical_service_rates:
        raise ValueError("recommended V is defined for identical service rates")
    mu = scenario.job_classes[0].service_rate
    w = np.array([c.weight for c in scenario.job_classes])
    rho_w = min(c.traffic_intensity / c.weight for c in scenario.job_classes)
    if rho_w <= 0:
        raise ValueError("weighted minimum traffic intensity is zero")
    alpha1, _, alpha3, _, _, _, _, _, _, _ = _alpha_constants(scenario)
    return math.sqrt((alpha3 / rho_w + w.sum()) * mu * w.min() / alpha1)


def theorem_bounds(scenario: Scenario, V: Optional[float] = None) -> TheoremBounds:
    """Closed-form constants and the mean holding-cost bound.

    The returned ``queue_bound`` bounds ``sum_i c_i E[Q_i(t)]`` for every t;
    with unit holding costs it is the mean queue length bound.
    """
    alpha1, alpha2, alpha3, alpha4, alpha5, c_ratio, n_max, n_min, rho, drift_margin = \
        _alpha_constants(scenario)
    if drift_margin <= 0:
        raise ValueError("stability margin is not positive")
    cfg = scenario.config
    a = scenario.reward_bound
    try:
        v_rec = recommended_V(scenario)
    except ValueError:
        v_rec = float("nan")
    v_used = V if V is not None else (cfg.V if cfg.V is not None else v_rec)
    if not (v_used > 0):
        raise ValueError("no positive V available for the bound")

    w = np.array([c.weight for c in scenario.job_classes])
    c_hold = np.array([c.holding_cost for c in scenario.job_classes])
    min_wc = float(np.min(w / c_hold))
    c_max = float(c_hold.max())
    load_margin = 1.0 - rho / n_min
    tau1 = (cfg.gamma + a) * v_used * n_max / min_wc
    tau2 = 2.0 * c_ratio * n_max ** 2 * float(w.max()) / (load_margin * min_wc)
    queue_bound = max(tau1, tau2) + (1.0 + rho / n_min) / drift_margin * c_max + c_max
    return TheoremBounds(
        alpha1=alpha1, alpha2=alpha2, alpha3=alpha3, alpha4=alpha4, alpha5=alpha5,
        tau1=tau1, tau2=tau2, queue_bound=queue_bound, recommended_V=v_rec,
        cost_ratio=c_ratio)


# -- scenario construction and I/O -------------------------------------------


def _unit(x: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(x)
    if norm == 0:
        raise ValueError("cannot normalize the zero vector")
    return x / norm


def random_scenario(num_job_classes: int = 10, num_server_classes: int = 2, dim: int = 2,
                    total_intensity: float = 1.0, total_capacity: int = 4,
                    service_rate: float = 1.0, gamma: float = 1.2, noise_std: float = 0.1,
                    horizon: int = 500, seed: int = 0, weights: Optional[Sequence[float]] = None,
                    holding_costs: Optional[Sequence[float]] = None,
                    switch_threshold: float = 0.0, V: Optional[float] = None) -> Scenario:
    """Random instance with equal traffic split and equal capacity split.

    Features are uniform on [0, 1]^d scaled to unit norm, the hidden
    parameter likewise on [0, 1]^(d^2); rewards are bounded by a = 1.
    """
    if total_capacity % num_server_classes != 0:
        raise ValueError("total capacity must split evenly across server classes")
    rng = np.random.default_rng(seed)
    theta = _unit(rng.uniform(0.0, 1.0, size=dim * dim)).reshape(dim, dim)
    env = BilinearEnvironment(theta=theta, reward_bound=1.0,
                              noise=NoiseSpec("gaussian", noise_std))
    rho_i = total_intensity / num_job_classes
    weights = list(weights) if weights is not None else [1.0] * num_job_classes
    holding_costs = list(holding_costs) if holding_costs is not None else [1.0] * num_job_classes
    jobs = [JobClassSpec(id=i, feature=_unit(rng.uniform(0.0, 1.0, size=dim)),
                         arrival_rate=rho_i * service_rate, service_rate=service_rate,
                         weight=weights[i], holding_cost=holding_costs[i])
            for i in range(num_job_classes)]
    servers = [ServerClassSpec(id=j, feature=_unit(rng.uniform(0.0, 1.0, size=dim)),
                               capacity=total_capacity // num_server_classes)
               for j in range(num_server_classes)]
    cfg = SystemConfig(horizon=horizon, gamma=gamma, V=V, seed=seed,
                       switch_threshold=switch_threshold)
    return Scenario(jobs, servers, cfg, env)


def scenario_to_dict(scenario: Scenario) -> dict:
    doc = {
        "reward_bound": scenario.reward_bound,
        "config": {
            "horizon": scenario.config.horizon,
            "gamma": scenario.config.gamma,
            "V": scenario.config.V,
            "zeta": scenario.config.zeta,
            "seed": scenario.config.seed,
            "switch_threshold": scenario.config.switch_threshold,
            "algorithm": scenario.config.algorithm,
        },
        "job_classes": [
            {"id": c.id, "feature": c.feature.tolist(), "arrival_rate": c.arrival_rate,
             "service_rate": c.service_rate, "weight": c.weight, "holding_cost": c.holding_cost}
            for c in scenario.job_classes
        ],
        "server_classes": [
            {"id": s.id, "feature": s.feature.tolist(), "capacity": s.capacity,
             **({"schedule": list(s.schedule.pattern)} if s.schedule is not None else {})}
            for s in scenario.server_classes
        ],
    }
    if isinstance(scenario.env, BilinearEnvironment):
        doc["reward_model"] = "bilinear"
        doc["theta"] = scenario.env.theta.tolist()
        doc["noise"] = {"kind": scenario.env.noise.kind, "scale": scenario.env.noise.scale}
    else:
        doc["reward_model"] = "table"
        doc["table_means"] = scenario.env.means.tolist()
        doc["table_variances"] = scenario.env.variances.tolist()
    return doc


def scenario_from_dict(doc: dict) -> Scenario:
    cfg_doc = doc["config"]
    cfg = SystemConfig(
        horizon=int(cfg_doc["horizon"]), gamma=float(cfg_doc["gamma"]),
        V=None if cfg_doc.get("V") is None else float(cfg_doc["V"]),
        zeta=None if cfg_doc.get("zeta") is None else float(cfg_doc["zeta"]),
        seed=int(cfg_doc.get("seed", 0)),
        switch_threshold=float(cfg_doc.get("switch_threshold", 0.0)),
        algorithm=cfg_doc.get("algorithm", "sabr"))
    jobs = [JobClassSpec(id=int(c["id"]), feature=np.array(c["feature"], dtype=float),
                         arrival_rate=float(c["arrival_rate"]), service_rate=float(c["service_rate"]),
                         weight=float(c.get("weight", 1.0)), holding_cost=float(c.get("holding_cost", 1.0)))
            for c in doc["job_classes"]]
    servers = []
    for s in doc["server_classes"]:
        schedule = CapacitySchedule(tuple(s["schedule"])) if "schedule" in s else None
        servers.append(ServerClassSpec(id=int(s["id"]), feature=np.array(s["feature"], dtype=float),
                                       capacity=int(s["capacity"]), schedule=schedule))
    a = float(doc.get("reward_bound", 1.0))
    if doc.get("reward_model", "bilinear") == "table":
        env = RewardTableEnvironment(means=np.array(doc["table_means"], dtype=float),
                                     variances=np.array(doc["table_variances"], dtype=float),
                                     reward_bound=a)
    else:
        noise_doc = doc.get("noise", {"kind": "gaussian", "scale": 0.0})
        env = BilinearEnvironment(theta=np.array(doc["theta"], dtype=float), reward_bound=a,
                                  noise=NoiseSpec(noise_doc.get("kind", "gaussian"),
                                                  float(noise_doc.get("scale", 0.0))))
    return Scenario(jobs, servers, cfg, env)


def save_scenario(scenario: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(scenario_to_dict(scenario), fh, indent=2)
        fh.write("\n")


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))


def with_config(scenario: Scenario, **changes) -> Scenario:
    """Copy of ``scenario`` with config fields replaced."""
    return Scenario(scenario.job_classes, scenario.server_classes,
                    replace(scenario.config, **changes), scenario.env)


def with_weights(scenario: Scenario, weights: Sequence[float]) -> Scenario:
    """Copy of ``scenario`` with per-class fairness weights replaced."""
    if len(weights) != scenario.num_job_classes:
        raise ValueError("one weight per job class required")
    jobs = [replace(c, weight=float(w)) for c, w in zip(scenario.job_classes, weights)]
    return Scenario(jobs, scenario.server_classes, scenario.config, scenario.env)
