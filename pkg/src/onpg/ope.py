"""Optimistic policy evaluation: tabular, linear and finite-class variants.

Each routine runs a backward pass ``h = H-1 .. 0`` and, at step ``h``, reads
only the ``h``-th block of the split dataset plus the already computed
``Vbar_{h+1}``. The dataset records these reads when access logging is on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .env import TERMINAL, TrajectoryBatch
from .errors import ConfigurationError, ValidationError
from .numerics import CovarianceState, quad_norms, ridge_fit
from .oracle import occupancy
from .policy import policy_probs

DEFAULT_DELTA = 0.05

# -- data ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StepData:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray

    def __len__(self):
        return self.states.shape[0]

    def tuples(self) -> list[tuple[int, int, float, int | None]]:
        return [
            (int(s), int(a), float(r), None if int(t) == TERMINAL else int(t))
            for s, a, r, t in zip(self.states, self.actions, self.rewards, self.next_states)
        ]

    def targets(self, v_next: np.ndarray | None) -> np.ndarray:
        """Regression targets ``r + Vbar_{h+1}(s')``."""
        if v_next is None:
            return self.rewards.copy()
        return self.rewards + v_next[self.next_states]


@dataclass(eq=False)
class EpisodeDataset:
    """N trajectories and their H-way split.

    Block ``h`` holds trajectories ``[h*M, (h+1)*M)`` with ``M = N // H``, and
    contributes only its step-``h`` transitions to ``D_h``. Remainder
    trajectories are kept in ``trajectories`` but never used.
    """

    trajectories: TrajectoryBatch
    H: int
    access_log: list[int] | None = None
    _blocks: list[StepData] = field(default_factory=list, repr=False)

    def __post_init__(self):
        N = len(self.trajectories)
        if self.trajectories.H != self.H:
            raise ConfigurationError(f"trajectories have length {self.trajectories.H}, expected H = {self.H}")
        if 0 < N < self.H:
            raise ConfigurationError(f"need at least H = {self.H} trajectories to split, got {N}")
        M = N // self.H
        tr = self.trajectories
        self._blocks = []
        for h in range(self.H):
            rows = slice(h * M, (h + 1) * M)
            self._blocks.append(
                StepData(tr.states[rows, h], tr.actions[rows, h], tr.rewards[rows, h], tr.next_states[rows, h])
            )

    @property
    def N(self) -> int:
        return len(self.trajectories)

    @property
    def per_step_count(self) -> int:
        return self.N // self.H

    def step_data(self, h: int) -> StepData:
        if self.access_log is not None:
            self.access_log.append(h)
        return self._blocks[h]

    @property
    def split(self) -> list[list[tuple[int, int, float, int | None]]]:
        return [block.tuples() for block in self._blocks]


def split_dataset(trajectories, H: int, *, log_access: bool = False) -> EpisodeDataset:
    if not isinstance(trajectories, TrajectoryBatch):
        trajectories = list(trajectories)
        if 0 < len(trajectories) < H:
            raise ConfigurationError(f"need at least H = {H} trajectories to split, got {len(trajectories)}")
        trajectories = TrajectoryBatch.from_trajectories(trajectories)
    return EpisodeDataset(trajectories, H, [] if log_access else None)


# -- estimates -------------------------------------------------------------


@dataclass(eq=False)
class ValueEstimate:
    """Optimistic ``Qbar`` (H, S, A), its policy average ``Vbar`` (H + 1, S) and the bonus used."""

    q: np.ndarray
    v: np.ndarray
    bonus: np.ndarray

    kind = "base"

    @property
    def H(self) -> int:
        return self.q.shape[0]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "q": self.q.tolist(), "v": self.v.tolist(), "bonus": self.bonus.tolist()}


@dataclass(eq=False)
class TabularEstimate(ValueEstimate):
    counts: np.ndarray = None
    p_hat: np.ndarray = None
    r_hat: np.ndarray = None
    alpha: float = 0.0

    kind = "tabular"

    def to_dict(self) -> dict:
        return {**super().to_dict(), "alpha": self.alpha, "counts": self.counts.tolist(),
                "p_hat": self.p_hat.tolist(), "r_hat": self.r_hat.tolist()}


@dataclass(eq=False)
class LinearEstimate(ValueEstimate):
    theta: np.ndarray = None
    covs: list[CovarianceState] = None
    alpha: float = 0.0
    lam: float = 1.0

    kind = "linear"

    def to_dict(self) -> dict:
        return {**super().to_dict(), "alpha": self.alpha, "lambda": self.lam,
                "theta": self.theta.tolist(), "covs": [c.to_dict() for c in self.covs]}


@dataclass(eq=False)
class GeneralEstimate(ValueEstimate):
    members: list[np.ndarray] = None
    losses: list[np.ndarray] = None
    beta: float = 0.0

    kind = "general"

    def to_dict(self) -> dict:
        return {**super().to_dict(), "beta": self.beta,
                "members": [m.tolist() for m in self.members],
                "losses": [x.tolist() for x in self.losses]}


def _cap(H: int, h: int, truncation: str) -> float:
    if truncation == "step":
        return float(H - h)
    if truncation == "horizon":
        return float(H)
    raise ConfigurationError(f"unknown truncation {truncation!r}; use 'step' or 'horizon'")


def _check_policy(probs: np.ndarray, dataset: EpisodeDataset) -> None:
    if probs.shape[0] != dataset.H:
        raise ConfigurationError(f"policy horizon {probs.shape[0]} != dataset horizon {dataset.H}")


def ope_tabular(policy, dataset: EpisodeDataset, alpha: float, *, truncation: str = "step") -> TabularEstimate:
    probs = policy_probs(policy)
    _check_policy(probs, dataset)
    H, S, A = probs.shape
    q = np.zeros((H, S, A))
    v = np.zeros((H + 1, S))
    bonus = np.zeros((H, S, A))
    counts = np.zeros((H, S, A), dtype=np.int64)
    p_hat = np.full((H, S, A, S), 1.0 / S)
    r_hat = np.zeros((H, S, A))
    for h in range(H - 1, -1, -1):
        D = dataset.step_data(h)
        np.add.at(counts[h], (D.states, D.actions), 1)
        reward_sum = np.zeros((S, A))
        np.add.at(reward_sum, (D.states, D.actions), D.rewards)
        seen = counts[h] > 0
        r_hat[h][seen] = reward_sum[seen] / counts[h][seen]
        if h < H - 1:
            trans = np.zeros((S, A, S))
            np.add.at(trans, (D.states, D.actions, D.next_states), 1.0)
            p_hat[h][seen] = trans[seen] / counts[h][seen][:, None]
        bonus[h] = alpha / np.sqrt(counts[h] + 1.0)
        q[h] = np.minimum(_cap(H, h, truncation), p_hat[h] @ v[h + 1] + r_hat[h] + bonus[h])
        v[h] = (probs[h] * q[h]).sum(axis=1)
    return TabularEstimate(q, v, bonus, counts=counts, p_hat=p_hat, r_hat=r_hat, alpha=float(alpha))


def ope_linear(
    policy,
    dataset: EpisodeDataset,
    alpha: float,
    lam: float,
    features: np.ndarray,
    *,
    truncation: str = "step",
) -> LinearEstimate:
    """Least-squares evaluation with elliptical bonus ``alpha * ||phi||_{(Sigma_h + lam I)^{-1}}``.

    ``features`` is the ``(H, S, A, d)`` tensor of ``phi_h(s, a)``.
    """
    if not lam > 0:
        raise ConfigurationError("lambda must be positive")
    probs = policy_probs(policy)
    _check_policy(probs, dataset)
    features = np.asarray(features, dtype=np.float64)
    H, S, A = probs.shape
    if features.ndim != 4 or features.shape[:3] != (H, S, A):
        raise ValidationError(f"features have shape {features.shape}, expected {(H, S, A)} + (d,)")
    d = features.shape[-1]
    q = np.zeros((H, S, A))
    v = np.zeros((H + 1, S))
    bonus = np.zeros((H, S, A))
    theta = np.zeros((H, d))
    covs: list[CovarianceState] = [None] * H
    for h in range(H - 1, -1, -1):
        D = dataset.step_data(h)
        X = features[h, D.states, D.actions]
        y = D.targets(v[h + 1] if h < H - 1 else None)
        theta[h] = ridge_fit(X, y, lam)
        covs[h] = CovarianceState.from_rows(X, lam)
        bonus[h] = alpha * quad_norms(features[h], covs[h])
        q[h] = np.clip(features[h] @ theta[h] + bonus[h], 0.0, _cap(H, h, truncation))
        v[h] = (probs[h] * q[h]).sum(axis=1)
    return LinearEstimate(q, v, bonus, theta=theta, covs=covs, alpha=float(alpha), lam=float(lam))


ClassSource = Union[np.ndarray, Callable[[int, np.ndarray], np.ndarray]]


def confidence_set(losses: np.ndarray, beta: float) -> np.ndarray:
    """Indices of members whose loss is within ``beta`` of the smallest loss."""
    return np.flatnonzero(losses <= losses.min() + beta)


def td_losses(members: np.ndarray, D: StepData, v_next: np.ndarray | None) -> np.ndarray:
    """Squared-TD loss of every member ``(n, S, A)`` on one data block."""
    resid = members[:, D.states, D.actions] - D.targets(v_next)[None, :]
    return (resid**2).sum(axis=1)


def general_step(members: np.ndarray, D: StepData, v_next, beta: float):
    """One backward step of the finite-class evaluation: ``(Qbar_h, width, members_in_set, losses)``."""
    losses = td_losses(members, D, v_next)
    idx = confidence_set(losses, beta)
    chosen = members[idx]
    return chosen.max(axis=0), chosen.max(axis=0) - chosen.min(axis=0), idx, losses


def _materialize(source: ClassSource, h: int, v_next: np.ndarray, S: int, A: int, H: int) -> np.ndarray:
    members = np.asarray(source(h, v_next) if callable(source) else source, dtype=np.float64)
    if members.ndim != 3 or members.shape[1:] != (S, A) or members.shape[0] == 0:
        raise ValidationError(f"function class at step {h} must be a nonempty (n, {S}, {A}) array")
    if (members < -1e-12).any() or (members > H + 1e-12).any():
        raise ValidationError(f"function class at step {h} has values outside [0, {H}]")
    return members


def ope_general(policy, dataset: EpisodeDataset, beta: float, function_class: Sequence[ClassSource]) -> GeneralEstimate:
    """Confidence-set evaluation over an explicit finite class per step.

    ``function_class[h]`` is either an ``(n_h, S, A)`` array of candidate
    tables or a callable ``(h, Vbar_{h+1}) -> array`` producing one. The
    confidence set does not depend on ``(s, a)`` and is built once per step.
    """
    probs = policy_probs(policy)
    _check_policy(probs, dataset)
    H, S, A = probs.shape
    if len(function_class) != H:
        raise ValidationError(f"need one function class per step ({H}), got {len(function_class)}")
    if beta < 0:
        raise ConfigurationError("beta must be non-negative")
    q = np.zeros((H, S, A))
    v = np.zeros((H + 1, S))
    width = np.zeros((H, S, A))
    members: list[np.ndarray] = [None] * H
    losses: list[np.ndarray] = [None] * H
    for h in range(H - 1, -1, -1):
        D = dataset.step_data(h)
        F = _materialize(function_class[h], h, v[h + 1], S, A, H)
        v_next = v[h + 1] if h < H - 1 else None
        q[h], width[h], members[h], losses[h] = general_step(F, D, v_next, beta)
        v[h] = (probs[h] * q[h]).sum(axis=1)
    return GeneralEstimate(q, v, width, members=members, losses=losses, beta=float(beta))


def mean_bonus_under(policy, estimate: ValueEstimate, env) -> np.ndarray:
    """Exact ``E_{(s_h, a_h) ~ pi}[b_h(s_h, a_h)]`` for every step."""
    return (occupancy(env, policy) * estimate.bonus).sum(axis=(1, 2))


# -- theory-scale parameters -------------------------------------------------


def tabular_alpha(H: int, S: int, A: int, K: int, scale: float = 1.0, delta: float = DEFAULT_DELTA) -> float:
    return scale * H * math.sqrt(math.log(K * H * S * A / delta))


def linear_alpha(H: int, d: int, K: int, N: int, scale: float = 1.0, delta: float = DEFAULT_DELTA) -> float:
    return scale * H * math.sqrt(d * math.log(K * N / delta))


def general_beta(H: int, log_class_size: float, N: int, K: int, scale: float = 1.0,
                 delta: float = DEFAULT_DELTA) -> float:
    """``scale * H^2 * log(|F| N K / delta)`` with ``log|F|`` passed directly."""
    return scale * H**2 * (log_class_size + math.log(N * K / delta))
