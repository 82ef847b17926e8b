"""Ridge-regression bandit state with rank-1 updates and optimistic indices.

The learner regresses observed assignment rewards on pair feature vectors
(the flattened outer products of job and server features).  The design
matrix inverse is maintained incrementally via the Sherman-Morrison
identity, together with the running determinant used by the rarely
switching variant to decide when cached indices must be recomputed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "RegularizedDesign",
    "ConfidenceParams",
    "SwitchState",
    "beta",
    "ucb_index",
    "truncated_estimate",
    "maybe_refresh",
    "save_design",
    "load_design",
]

# Re-symmetrize the maintained inverse periodically so rank-1 update
# round-off cannot accumulate over long horizons.
_RESYMMETRIZE_EVERY = 10_000


class RegularizedDesign:
    """State of the regularized least-squares estimator.

    Maintains ``inv_lambda`` (the inverse of ``zeta I + sum w w'`` over all
    observed pair features), the response accumulator ``b``, and the running
    determinant of the design matrix.  Single-owner mutable state: not safe
    for concurrent mutation; share read-only copies instead.
    """

    def __init__(self, dim: int, zeta: float):
        if dim < 1:
            raise ValueError("dimension must be positive")
        if zeta <= 0:
            raise ValueError("zeta must be positive")
        self.dim = dim
        self.zeta = float(zeta)
        self.inv_lambda = np.eye(dim) / zeta
        self.b = np.zeros(dim)
        self.det_lambda = float(zeta) ** dim
        self.update_count = 0

    def update(self, w: np.ndarray, xi: float) -> "RegularizedDesign":
        """Rank-1 update with pair feature ``w`` and observed reward ``xi``."""
        w = np.asarray(w, dtype=float)
        if w.shape != (self.dim,):
            raise ValueError(f"expected feature of length {self.dim}, got shape {w.shape}")
        if not (np.all(np.isfinite(w)) and math.isfinite(xi)):
            raise ValueError("non-finite update input")
        mw = self.inv_lambda @ w
        denom = 1.0 + float(w @ mw)
        self.inv_lambda -= np.outer(mw, mw) / denom
        self.b += w * xi
        self.det_lambda *= denom
        self.update_count += 1
        if self.update_count % _RESYMMETRIZE_EVERY == 0:
            self.inv_lambda = (self.inv_lambda + self.inv_lambda.T) / 2.0
        return self

    def theta_hat(self) -> np.ndarray:
        return self.inv_lambda @ self.b

    def copy(self) -> "RegularizedDesign":
        out = RegularizedDesign(self.dim, self.zeta)
        out.inv_lambda = self.inv_lambda.copy()
        out.b = self.b.copy()
        out.det_lambda = self.det_lambda
        out.update_count = self.update_count
        return out


@dataclass(frozen=True)
class ConfidenceParams:
    """Inputs of the confidence radius.

    ``dim`` is the dimension of the linear model (d^2 for pair features of
    d-dimensional class features), ``kappa`` the sub-Gaussian noise scale.
    """

    kappa: float
    horizon: int
    zeta: float
    dim: int

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.zeta <= 0:
            raise ValueError("zeta must be positive")
        if self.dim < 1:
            raise ValueError("dim must be positive")


def beta(params: ConfidenceParams, t: int) -> float:
    """Squared confidence radius at step t: (kappa sqrt(dim log(tT)) + sqrt(zeta))^2."""
    if not (1 <= t <= params.horizon):
        raise ValueError(f"step {t} outside [1, {params.horizon}]")
    root = params.kappa * math.sqrt(params.dim * math.log(t * params.horizon)) \
        + math.sqrt(params.zeta)
    return root * root


def ucb_index(design: RegularizedDesign, params: ConfidenceParams, w: np.ndarray, t: int) -> float:
    """Optimistic reward index: the maximum of ``w' theta`` over the confidence set.

    Equals ``w' theta_hat + sqrt(beta(t)) * ||w||`` in the inverse-design
    norm, the value attained by the unique maximizer of the linear objective
    over the confidence ellipsoid.
    """
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)):
        raise ValueError("non-finite feature vector")
    b = beta(params, t)
    width = float(w @ design.inv_lambda @ w)
    return float(w @ design.theta_hat()) + math.sqrt(max(width, 0.0) * b)


def truncated_estimate(index: float, bound: float) -> float:
    """Clamp an index to the known reward range [-bound, bound]."""
    if bound <= 0:
        raise ValueError("bound must be positive")
    return max(-bound, min(bound, index))


@dataclass
class SwitchState:
    """Rarely-switching bookkeeping: refresh only when the determinant grows enough."""

    threshold: float                       # C >= 0; refresh when det > (1 + C) * det at last refresh
    det_at_last_refresh: float = 0.0
    cached_theta: Optional[np.ndarray] = None
    cached_indices: Optional[np.ndarray] = None
    refresh_count: int = 0

    def __post_init__(self):
        if self.threshold < 0:
            raise ValueError("switch threshold must be nonnegative")


def maybe_refresh(switch: SwitchState, design: RegularizedDesign, params: ConfidenceParams,
                  pair_features: np.ndarray, t: int) -> np.ndarray:
    """Return cached optimistic indices, recomputing them only when due.

    A refresh happens at t = 1 and whenever the design determinant has grown
    past (1 + C) times its value at the previous refresh.  ``pair_features``
    has shape (I, J, dim); the returned index matrix has shape (I, J).
    """
    due = switch.cached_indices is None or t == 1 or \
        design.det_lambda > (1.0 + switch.threshold) * switch.det_at_last_refresh
    if due:
        theta = design.theta_hat()
        b = beta(params, t)
        flat = pair_features.reshape(-1, design.dim)
        widths = np.einsum("ki,ij,kj->k", flat, design.inv_lambda, flat)
        indices = flat @ theta + np.sqrt(np.maximum(widths, 0.0) * b)
        switch.cached_theta = theta
        switch.cached_indices = indices.reshape(pair_features.shape[:2])
        switch.det_at_last_refresh = design.det_lambda
        switch.refresh_count += 1
    return switch.cached_indices


def save_design(design: RegularizedDesign, path) -> None:
    """Checkpoint the estimator state for resumable runs."""
    np.savez(path, inv_lambda=design.inv_lambda, b=design.b,
             det_lambda=np.array([design.det_lambda]), zeta=np.array([design.zeta]),
             update_count=np.array([design.update_count]))


def load_design(path) -> RegularizedDesign:
    data = np.load(path)
    dim = data["b"].shape[0]
    design = RegularizedDesign(dim, float(data["zeta"][0]))
    design.inv_lambda = data["inv_lambda"]
    design.b = data["b"]
    design.det_lambda = float(data["det_lambda"][0])
    design.update_count = int(data["update_count"][0])
    return design
