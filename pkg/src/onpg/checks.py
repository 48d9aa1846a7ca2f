"""Desk-scale invariant suites.

Each suite builds random instances, checks one identity or bound against the
exact oracle and returns a :class:`SuiteReport`. The ``check`` command runs
them all; the acceptance tests run them at the pinned criterion sizes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .driver import RunConfig, complexity_measure, run, theorem1_params
from .env import (
    make_deterministic_tabular,
    make_gap_tabular,
    make_random_linear,
    make_random_tabular,
    sample_episodes,
)
from .numerics import CovarianceState, cov_accumulate, quad_norm, ridge_fit
from .ope import general_step, mean_bonus_under, ope_general, ope_linear, ope_tabular, split_dataset
from .oracle import (
    bellman_gaps,
    bellman_image_class,
    policy_difference_check,
    random_distractors,
    trajectory_distribution,
)
from .policy import softmax
from .rng import StreamRegistry

RATE_GRID = (256, 1024, 4096, 16384)


@dataclass(frozen=True)
class SuiteReport:
    name: str
    instances: int
    metric: str
    value: float
    threshold: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"[{status}] {self.name}: {self.metric} = {self.value:.6g} vs {self.threshold}; instances = {self.instances}{extra}"


def _random_probs(rng, H, S, A, temperature=1.0):
    return softmax(rng.normal(scale=temperature, size=(H, S, A)))


def policy_difference_suite(n_instances: int = 100, max_size: int = 6, seed: int = 0) -> SuiteReport:
    streams = StreamRegistry(seed)
    worst = 0.0
    for i in range(n_instances):
        rng = streams.stream("policy-difference", i)
        S, A, H = (int(x) for x in rng.integers(1, max_size + 1, size=3))
        env = make_random_tabular(S, A, H, rng)
        pi = _random_probs(rng, H, S, A, 2.0)
        pik = _random_probs(rng, H, S, A, 2.0)
        qbar = rng.uniform(0.0, H, size=(H, S, A))
        worst = max(worst, policy_difference_check(env, pi, pik, qbar)[2])
    return SuiteReport("policy-difference identity", n_instances, "max residual", worst, "<= 1e-9", worst <= 1e-9)


def _optimism_env(kind: str, rng):
    if kind == "tabular":
        return make_random_tabular(4, 3, 3, rng)
    return make_random_linear(4, 6, 3, 3, rng)


def optimism_suite(
    kind: str = "tabular",
    n_seeds: int = 100,
    N: int = 900,
    K: int = 6,
    m: int = 3,
    alpha_scale: float = 1.0,
    seed: int = 0,
) -> SuiteReport:
    """Lower optimism bound ``Qbar_h >= T Qbar_{h+1}`` (and the 2b upper half where it holds)."""
    streams = StreamRegistry(seed)
    cells = lower = upper = 0
    eta = 1.0 / (m * 9)
    for i in range(n_seeds):
        env = _optimism_env(kind, streams.stream(f"optimism-{kind}", i))
        cfg = RunConfig(K=K, N=N, m=m, eta=eta, ope_kind=kind, alpha_scale=alpha_scale, seed=seed * 100_003 + i)
        result = run(cfg, env)
        cells += K * env.H * env.S * env.A
        lower += sum(r.opt_violations for r in result.records)
        upper += sum(r.upper_violations for r in result.records)
    frac = lower / cells
    upper_frac = upper / cells
    ok = frac <= 0.05 and upper_frac <= 0.05
    return SuiteReport(
        f"optimism ({kind})", n_seeds, "lower-bound violation fraction", frac, "<= 0.05", ok,
        f"upper-half violation fraction {upper_frac:.4g}, {cells} cells",
    )


def consistency_suite(K: int = 50, seed: int = 0) -> SuiteReport:
    env = make_random_tabular(4, 3, 3, StreamRegistry(seed).stream("consistency"))
    cfg = RunConfig(K=K, N=300, m=5, eta=1.0 / 45, seed=seed, record_invariants=True)
    result = run(cfg, env)
    worst = max(r.consistency_residual for r in result.records)
    decomposition = max(abs(r.subopt - (r.term_i + r.term_ii)) for r in result.records)
    ok = worst <= 1e-9 and decomposition <= 1e-12
    return SuiteReport("consistency telescoping", K, "max residual", worst, "<= 1e-9", ok,
                       f"term decomposition residual {decomposition:.3g}")


def rate_slope(kind: str = "tabular", grid=RATE_GRID, reps: int = 5, seed: int = 0) -> tuple[float, list[float]]:
    """Log-log slope of the occupancy-weighted mean bonus (unit bonus scale) against N."""
    streams = StreamRegistry(seed)
    means = []
    for N in grid:
        vals = []
        for r in range(reps):
            rng = streams.stream(f"rate-env-{kind}", r)
            if kind == "tabular":
                env = make_random_tabular(4, 3, 3, rng)
            else:
                env = make_random_linear(4, 6, 3, 3, rng)
            probs = _random_probs(rng, env.H, env.S, env.A, 0.5)
            batch = sample_episodes(env, probs, N, streams.stream(f"rate-data-{kind}", r, N))
            data = split_dataset(batch, env.H)
            if kind == "tabular":
                est = ope_tabular(probs, data, 1.0)
            else:
                est = ope_linear(probs, data, 1.0, 1.0, env.phi)
            vals.append(float(mean_bonus_under(probs, est, env.tabular).mean()))
        means.append(float(np.mean(vals)))
    slope = float(np.polyfit(np.log(grid), np.log(means), 1)[0])
    return slope, means


def rate_suite(kind: str = "tabular", grid=RATE_GRID, reps: int = 5, seed: int = 0) -> SuiteReport:
    slope, means = rate_slope(kind, grid, reps, seed)
    ok = -0.65 <= slope <= -0.35
    return SuiteReport(f"on-policy bonus rate ({kind})", reps * len(grid), "log-log slope", slope,
                       "in [-0.65, -0.35]", ok, "means " + ", ".join(f"{m:.4g}" for m in means))


def max_trajectory_ratio(env, p: np.ndarray, q: np.ndarray) -> float:
    """``max_tau max(P^p(tau)/P^q(tau), P^q(tau)/P^p(tau))`` over full enumeration."""
    dp = trajectory_distribution(env, p)
    dq = trajectory_distribution(env, q)
    if dp.keys() != dq.keys():
        return math.inf
    return max(max(dp[t] / dq[t], dq[t] / dp[t]) for t in dp)


def lipschitz_suite(K: int = 100, m: int = 5, alpha_scale: float = 0.05, seed: int = 0) -> SuiteReport:
    """Step size at the boundary ``eta * m * H^2 = 1``; a small bonus keeps Qbar below its cap so policies move."""
    env = make_random_tabular(3, 2, 3, StreamRegistry(seed).stream("lipschitz"))
    H = env.H
    eta = 1.0 / (m * H * H)
    cfg = RunConfig(K=K, N=300, m=m, eta=eta, alpha_scale=alpha_scale, seed=seed, record_invariants=True)
    result = run(cfg, env)
    worst = 0.0
    for rec, pol in zip(result.records, result.policies):
        anchor = result.policies[rec.t_k - 1]
        worst = max(worst, max_trajectory_ratio(env, pol.probs, anchor.probs))
    bound = math.exp(2.0)
    return SuiteReport("policy Lipschitz", K, "max trajectory ratio", worst, f"<= e^2 = {bound:.4f}",
                       worst <= bound, f"eta*m*H^2 = {eta * m * H * H:.3g}")


def general_suite(n_instances: int = 20, betas=(0.0, 0.5, 5.0, 50.0, 1e9), N: int = 300,
                  n_distractors: int = 20, seed: int = 0) -> SuiteReport:
    """Realizable finite class on deterministic MDPs: optimism everywhere, per-step monotonicity in beta."""
    streams = StreamRegistry(seed)
    cells = violations = monotone_failures = 0
    for i in range(n_instances):
        rng = streams.stream("general", i)
        env = make_deterministic_tabular(4, 3, 3, rng)
        fclass = bellman_image_class(env, random_distractors(env, n_distractors, rng))
        probs = _random_probs(rng, env.H, env.S, env.A, 1.0)
        data = split_dataset(sample_episodes(env, probs, N, rng), env.H)
        for beta in betas:
            est = ope_general(probs, data, beta, fclass)
            gaps = bellman_gaps(env, probs, est.q)
            cells += gaps.size
            violations += int((gaps < -1e-10).sum())
            # monotonicity at every step for a fixed continuation value
            for h in range(env.H):
                v_next = est.v[h + 1]
                members = fclass[h](h, v_next)
                block = data.step_data(h)
                prev = None
                for b in betas:
                    qh = general_step(members, block, v_next if h < env.H - 1 else None, b)[0]
                    if prev is not None and (qh < prev - 1e-12).any():
                        monotone_failures += 1
                    prev = qh
    frac = violations / cells
    ok = violations == 0 and monotone_failures == 0
    return SuiteReport("finite-class realizability", n_instances, "optimism violation fraction", frac, "== 0",
                       ok, f"{cells} cells, {monotone_failures} monotonicity failures")


def numerics_suite(n_instances: int = 1000, max_dim: int = 50, seed: int = 0) -> SuiteReport:
    streams = StreamRegistry(seed)
    worst_ridge = worst_norm = 0.0
    for i in range(n_instances):
        rng = streams.stream("numerics", i)
        d = int(rng.integers(1, max_dim + 1))
        n = int(rng.integers(1, 3 * d + 2))
        X = rng.normal(size=(n, d)) / math.sqrt(d)
        y = rng.normal(size=n)
        lam = float(rng.uniform(0.5, 2.0))
        M = X.T @ X + lam * np.eye(d)
        theta_ref = np.linalg.solve(M, X.T @ y)
        worst_ridge = max(worst_ridge, float(np.abs(ridge_fit(X, y, lam) - theta_ref).max()))
        cov = CovarianceState.from_rows(X, lam)
        phi = rng.normal(size=d)
        phi /= max(1.0, float(np.linalg.norm(phi)))
        ref = math.sqrt(float(phi @ np.linalg.inv(M) @ phi))
        worst_norm = max(worst_norm, abs(quad_norm(phi, cov) - ref))
    worst = max(worst_ridge, worst_norm)
    return SuiteReport("numerics oracle equivalence", n_instances, "max abs diff", worst, "<= 1e-10",
                       worst <= 1e-10, f"ridge {worst_ridge:.3g}, quad norm {worst_norm:.3g}")


def elliptical_potential_slope(d: int = 5, grid=(400, 1600, 6400, 25600), seed: int = 0) -> float:
    """Slope of ``log((1/N) sum_n ||phi_n||_{(Sigma^n + I)^{-1}})`` against ``log N``."""
    rng = StreamRegistry(seed).stream("elliptical")
    means = []
    for N in grid:
        phis = rng.normal(size=(N, d))
        phis /= np.linalg.norm(phis, axis=1, keepdims=True)
        cov = CovarianceState.empty(d, 1.0)
        total = 0.0
        for phi in phis:
            total += quad_norm(phi, cov)
            cov = cov_accumulate(cov, phi)
        means.append(total / N)
    return float(np.polyfit(np.log(grid), np.log(means), 1)[0])


def all_suites(seed: int = 0, alpha_scale: float = 1.0) -> list[SuiteReport]:
    return [
        policy_difference_suite(seed=seed),
        optimism_suite("tabular", alpha_scale=alpha_scale, seed=seed),
        optimism_suite("linear", alpha_scale=alpha_scale, seed=seed),
        consistency_suite(seed=seed),
        rate_suite("tabular", seed=seed),
        rate_suite("linear", seed=seed),
        lipschitz_suite(seed=seed),
        general_suite(seed=seed),
        numerics_suite(seed=seed),
    ]


E2E_C_N = 3e-4


def end_to_end_suite(m: int | None = None, n_seeds: int = 20, epsilon: float = 0.1, alpha_scale: float = 0.1,
                     c_N: float = E2E_C_N, seed: int = 0) -> SuiteReport:
    """Median suboptimality of the output policy on a gapped 4x3x3 model with the theory schedule.

    ``m=None`` keeps the scheduled period; ``m=1`` is the purely on-policy variant
    with the same ``K``, ``N`` and ``eta``.
    """
    env = make_gap_tabular(4, 3, 3, StreamRegistry(seed).stream("e2e-env"))
    L = complexity_measure("tabular", env.H, S=env.S, A=env.A)
    sched = theorem1_params(epsilon, env.H, env.A, L, c_N=c_N)
    period = sched.m if m is None else m
    subs, collections = [], 0
    for i in range(n_seeds):
        cfg = RunConfig(K=sched.K, N=sched.N, m=period, eta=sched.eta, alpha_scale=alpha_scale,
                        seed=seed * 1_000_003 + i)
        result = run(cfg, env)
        subs.append(result.out_subopt)
        collections = result.collections
    med = float(np.median(subs))
    return SuiteReport(f"end-to-end learning (m={period})", n_seeds, "median output suboptimality", med,
                       "<= 0.15", med <= 0.15,
                       f"K={sched.K}, N={sched.N}, eta={sched.eta:.4g}, {collections} collections")
