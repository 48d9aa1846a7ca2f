"""Optimistic NPG outer loop and the theory-scale parameter schedule."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .env import LinearMDPSpec, sample_episodes, tabular_as_linear
from .errors import ConfigurationError
from .ope import (
    DEFAULT_DELTA,
    general_beta,
    linear_alpha,
    mean_bonus_under,
    ope_general,
    ope_linear,
    ope_tabular,
    split_dataset,
    tabular_alpha,
)
from .oracle import (
    bellman_gaps,
    consistency_check,
    deterministic_probs,
    policy_difference_check,
    policy_eval_exact,
    value_iteration,
)
from .policy import PolicyState, mirror_ascent_step, uniform_policy
from .rng import StreamRegistry

OPE_KINDS = ("tabular", "linear", "general")
VIOLATION_TOL = 1e-10


class LipschitzPreconditionWarning(UserWarning):
    """``eta * m * H^2 > 1``: consecutive policies between collections may drift apart."""


@dataclass(frozen=True)
class RunConfig:
    K: int
    N: int
    m: int
    eta: float
    ope_kind: str = "tabular"
    alpha_scale: float = 1.0
    alpha: float | None = None
    lam: float = 1.0
    beta: float | None = None
    seed: int = 0
    record_invariants: bool = False
    truncation: str = "step"
    delta: float = DEFAULT_DELTA

    def validate(self, H: int) -> "RunConfig":
        if self.K < 1:
            raise ConfigurationError("K must be >= 1")
        if self.N < H:
            raise ConfigurationError(f"N = {self.N} must be >= H = {H}")
        if self.m < 1:
            raise ConfigurationError("m must be >= 1")
        if not self.eta > 0:
            raise ConfigurationError("eta must be positive")
        if self.ope_kind not in OPE_KINDS:
            raise ConfigurationError(f"ope_kind must be one of {OPE_KINDS}, got {self.ope_kind!r}")
        if self.eta * self.m * H * H > 1:
            warnings.warn(
                f"eta * m * H^2 = {self.eta * self.m * H * H:.4g} > 1", LipschitzPreconditionWarning, stacklevel=3
            )
        return self


@dataclass(frozen=True)
class IterationRecord:
    k: int
    t_k: int
    vbar1: float
    vpik: float
    subopt: float
    term_i: float
    term_ii: float
    mean_bonus: tuple[float, ...]
    opt_violations: int
    upper_violations: int = 0
    consistency_residual: float | None = None
    policy_difference_residual: float | None = None


@dataclass(eq=False)
class RunResult:
    records: list[IterationRecord]
    out_index: int
    out_policy: PolicyState
    vstar: float
    episodes_used: int
    collections: int
    policies: list[PolicyState] | None = None

    @property
    def out_subopt(self) -> float:
        return self.records[self.out_index - 1].subopt


class Theorem1Params(NamedTuple):
    K: int
    N: int
    eta: float
    m: int


def theorem1_params(
    epsilon: float,
    H: int,
    num_actions: int,
    L: float,
    *,
    c_K: float = 1.0,
    c_N: float = 1.0,
    c_eta: float = 1.0,
    c_m: float = 1.0,
    delta: float = DEFAULT_DELTA,
) -> Theorem1Params:
    """``K ~ H^4 log|A| / eps^2``, ``N ~ L log^2(LK/delta) / eps^2``, ``eta ~ eps / H^3``, ``m ~ H / eps``.

    ``N`` is rounded up to a multiple of ``H``; ``m`` is capped so that
    ``eta * m * H^2 <= 1``.
    """
    if not epsilon > 0:
        raise ConfigurationError("epsilon must be positive")
    if epsilon > H:
        raise ConfigurationError(f"epsilon = {epsilon} exceeds the value range H = {H}")
    K = max(1, math.ceil(c_K * H**4 * math.log(num_actions) / epsilon**2))
    N = math.ceil(c_N * L * math.log(L * K / delta) ** 2 / epsilon**2)
    N = max(H, H * math.ceil(N / H))
    eta = c_eta * epsilon / H**3
    m = max(1, math.floor(c_m * H / epsilon))
    m = min(m, max(1, math.floor(1.0 / (eta * H * H))))
    while m > 1 and eta * m * H * H > 1:
        m -= 1
    if eta * m * H * H > 1:
        raise ConfigurationError(f"eta = {eta:.4g} violates eta * H^2 <= 1 even with m = 1")
    return Theorem1Params(K, N, eta, m)


def complexity_measure(kind: str, H: int, *, S: int = 0, A: int = 0, d: int = 0,
                       log_class_size: float = 0.0, eluder_dim: float = 0.0) -> float:
    """Consistency complexity L for each evaluation variant."""
    if kind == "tabular":
        return float(S * A * H**3)
    if kind == "linear":
        return float(d * d * H**3)
    if kind == "general":
        return float(H**3 * log_class_size * eluder_dim)
    raise ConfigurationError(f"unknown kind {kind!r}")


def _features(env) -> np.ndarray:
    if isinstance(env, LinearMDPSpec):
        return env.phi
    return tabular_as_linear(env.tabular).phi


def default_alpha(config: RunConfig, env) -> float:
    H, S, A = env.H, env.S, env.A
    if config.alpha is not None:
        return config.alpha
    if config.ope_kind == "linear":
        d = _features(env).shape[-1]
        return linear_alpha(H, d, config.K, config.N, config.alpha_scale, config.delta)
    return tabular_alpha(H, S, A, config.K, config.alpha_scale, config.delta)


def run(config: RunConfig, env, *, function_class=None, log_class_size: float | None = None) -> RunResult:
    """Run ``K`` iterations of optimistic NPG with exact-oracle metrics at every iteration.

    ``function_class`` (one entry per step, see :func:`onpg.ope.ope_general`)
    is required for ``ope_kind == "general"``; ``log_class_size`` feeds the
    default confidence width.
    """
    tab = env.tabular
    H, S, A = tab.H, tab.S, tab.A
    config.validate(H)
    kind = config.ope_kind
    if kind == "general" and function_class is None:
        raise ConfigurationError("general evaluation needs a function class")
    features = _features(env) if kind == "linear" else None
    alpha = default_alpha(config, env)
    if kind == "general":
        beta = config.beta
        if beta is None:
            beta = general_beta(H, log_class_size or 0.0, config.N, config.K, config.alpha_scale, config.delta)

    streams = StreamRegistry(config.seed)
    out_index = int(streams.stream("output").integers(1, config.K + 1))
    optimal, greedy = value_iteration(tab)
    vstar = float(optimal.V[0, tab.s1])
    greedy_probs = deterministic_probs(greedy, A)

    policy = uniform_policy(H, S, A, config.eta)
    records: list[IterationRecord] = []
    snapshots: list[PolicyState] | None = [] if config.record_invariants else None
    out_policy = policy
    dataset = None
    t_k = 1
    collections = 0
    for k in range(1, config.K + 1):
        if (k - 1) % config.m == 0:
            batch = sample_episodes(env, policy, config.N, streams.stream("collect", collections))
            dataset = split_dataset(batch, H)
            t_k = k
            collections += 1
        if kind == "tabular":
            est = ope_tabular(policy, dataset, alpha, truncation=config.truncation)
        elif kind == "linear":
            est = ope_linear(policy, dataset, alpha, config.lam, features, truncation=config.truncation)
        else:
            est = ope_general(policy, dataset, beta, function_class)

        probs = policy.probs
        vbar1 = float(est.v[0, tab.s1])
        vpik = float(policy_eval_exact(tab, probs).V[0, tab.s1])
        gaps = bellman_gaps(tab, probs, est.q)
        lower_ok = gaps >= -VIOLATION_TOL
        violations = int((~lower_ok).sum())
        upper_bad = int((lower_ok & (gaps > 2 * est.bonus + VIOLATION_TOL)).sum())
        extra = {}
        if config.record_invariants:
            extra["consistency_residual"] = consistency_check(tab, probs, est.q)[2]
            extra["policy_difference_residual"] = policy_difference_check(tab, greedy_probs, probs, est.q)[2]
            snapshots.append(policy)
        records.append(
            IterationRecord(
                k=k, t_k=t_k, vbar1=vbar1, vpik=vpik, subopt=vstar - vpik,
                term_i=vstar - vbar1, term_ii=vbar1 - vpik,
                mean_bonus=tuple(float(x) for x in mean_bonus_under(probs, est, tab)),
                opt_violations=violations, upper_violations=upper_bad, **extra,
            )
        )
        if k == out_index:
            out_policy = policy
        policy = mirror_ascent_step(policy, est)

    return RunResult(records, out_index, out_policy, vstar, collections * config.N, collections, snapshots)
