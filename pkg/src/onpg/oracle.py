"""Exact dynamic programming on tabular models: the ground truth every estimate is checked against."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, SizeGuardError
from .policy import policy_probs

TRAJECTORY_GUARD = 10**6


@dataclass(frozen=True, eq=False)
class ValueTable:
    Q: np.ndarray  # (H, S, A)
    V: np.ndarray  # (H + 1, S), V[H] = 0

    @property
    def H(self) -> int:
        return self.Q.shape[0]


def _tab(env):
    return env.tabular


def _probs_for(env, policy) -> np.ndarray:
    probs = policy_probs(policy)
    if probs.shape != (env.H, env.S, env.A):
        raise ConfigurationError(f"policy shape {probs.shape} does not match env {(env.H, env.S, env.A)}")
    return probs


def _q_table(qbar) -> np.ndarray:
    return np.asarray(getattr(qbar, "q", qbar), dtype=np.float64)


def value_iteration(env) -> tuple[ValueTable, np.ndarray]:
    """Optimal Q*/V* and the greedy deterministic policy (ties go to the lowest action)."""
    tab = _tab(env)
    H, S, A = tab.H, tab.S, tab.A
    Q = np.zeros((H, S, A))
    V = np.zeros((H + 1, S))
    greedy = np.zeros((H, S), dtype=np.int64)
    for h in range(H - 1, -1, -1):
        Q[h] = tab.R[h] + tab.P[h] @ V[h + 1]
        greedy[h] = np.argmax(Q[h], axis=1)
        V[h] = Q[h].max(axis=1)
    return ValueTable(Q, V), greedy


def deterministic_probs(actions: np.ndarray, A: int) -> np.ndarray:
    actions = np.asarray(actions, dtype=np.int64)
    probs = np.zeros(actions.shape + (A,))
    np.put_along_axis(probs, actions[..., None], 1.0, axis=-1)
    return probs


def policy_eval_exact(env, policy) -> ValueTable:
    tab = _tab(env)
    probs = _probs_for(tab, policy)
    Q = np.zeros((tab.H, tab.S, tab.A))
    V = np.zeros((tab.H + 1, tab.S))
    for h in range(tab.H - 1, -1, -1):
        Q[h] = tab.R[h] + tab.P[h] @ V[h + 1]
        V[h] = (probs[h] * Q[h]).sum(axis=1)
    return ValueTable(Q, V)


def bellman_apply(env, policy, h: int, q_next) -> np.ndarray:
    """``R_h + E[q_next(s', a') | s' ~ P_h(s, a), a' ~ pi_{h+1}(s')]``; ``q_next`` is ignored at the last step."""
    tab = _tab(env)
    if h == tab.H - 1 or q_next is None:
        return tab.R[h].copy()
    probs = _probs_for(tab, policy)
    q_next = np.asarray(q_next, dtype=np.float64)
    if q_next.shape != (tab.S, tab.A):
        raise ConfigurationError(f"q_next has shape {q_next.shape}, expected {(tab.S, tab.A)}")
    v_next = (probs[h + 1] * q_next).sum(axis=1)
    return tab.R[h] + tab.P[h] @ v_next


def bellman_gaps(env, policy, qbar) -> np.ndarray:
    """``Qbar_h - T^pi_h Qbar_{h+1}`` for every ``(h, s, a)``."""
    q = _q_table(qbar)
    tab = _tab(env)
    gaps = np.empty_like(q)
    for h in range(tab.H):
        nxt = q[h + 1] if h + 1 < tab.H else None
        gaps[h] = q[h] - bellman_apply(tab, policy, h, nxt)
    return gaps


def state_occupancy(env, policy) -> np.ndarray:
    """``d_h(s)``: probability of being in ``s`` at step ``h`` when starting from ``s1``."""
    tab = _tab(env)
    probs = _probs_for(tab, policy)
    d = np.zeros((tab.H, tab.S))
    d[0, tab.s1] = 1.0
    for h in range(tab.H - 1):
        sa = d[h][:, None] * probs[h]
        d[h + 1] = np.einsum("sa,sat->t", sa, tab.P[h])
    return d


def occupancy(env, policy) -> np.ndarray:
    """``d_h(s, a)`` over ``(H, S, A)``."""
    probs = _probs_for(env, policy)
    return state_occupancy(env, probs)[:, :, None] * probs


def trajectory_distribution(env, policy, *, guard: int = TRAJECTORY_GUARD) -> dict[tuple[int, ...], float]:
    """All positive-probability trajectories ``(s_1, a_1, ..., s_H, a_H)`` with their probabilities."""
    tab = _tab(env)
    probs = _probs_for(tab, policy)
    if (tab.S * tab.A) ** tab.H > guard:
        raise SizeGuardError(f"(S*A)^H = {(tab.S * tab.A) ** tab.H} exceeds guard {guard}")
    layer: dict[tuple[int, ...], float] = {(tab.s1,): 1.0}
    for h in range(tab.H):
        nxt: dict[tuple[int, ...], float] = {}
        for prefix, p in layer.items():
            s = prefix[-1]
            for a in np.flatnonzero(probs[h, s] > 0):
                pa = p * probs[h, s, a]
                if h == tab.H - 1:
                    nxt[prefix + (int(a),)] = pa
                    continue
                for s2 in np.flatnonzero(tab.P[h, s, a] > 0):
                    nxt[prefix + (int(a), int(s2))] = pa * tab.P[h, s, a, s2]
        layer = nxt
    return layer


def trajectory_probability(env, policy, tau: tuple[int, ...]) -> float:
    tab = _tab(env)
    probs = _probs_for(tab, policy)
    if tau[0] != tab.s1:
        return 0.0
    p = 1.0
    for h in range(tab.H):
        s, a = tau[2 * h], tau[2 * h + 1]
        p *= probs[h, s, a]
        if h < tab.H - 1:
            p *= tab.P[h, s, a, tau[2 * h + 2]]
    return float(p)


def policy_difference_check(env, comparator, iterate, qbar) -> tuple[float, float, float]:
    """Both sides of the generalized policy-difference identity.

    ``lhs = V^pi_1(s1) - Vbar_1(s1)`` where ``Vbar`` averages ``Qbar`` under the
    iterate; ``rhs`` is the occupancy-weighted sum of the policy-mismatch term
    minus the Bellman-gap term, both expectations under the comparator.
    """
    tab = _tab(env)
    pi = _probs_for(tab, comparator)
    pik = _probs_for(tab, iterate)
    q = _q_table(qbar)
    vbar1 = float(pik[0, tab.s1] @ q[0, tab.s1])
    lhs = float(policy_eval_exact(tab, pi).V[0, tab.s1]) - vbar1
    ds = state_occupancy(tab, pi)
    mismatch = float(np.einsum("hs,hsa->", ds, (pi - pik) * q))
    gap = float(np.einsum("hsa,hsa->", ds[:, :, None] * pi, bellman_gaps(tab, pik, q)))
    rhs = mismatch - gap
    return lhs, rhs, abs(lhs - rhs)


def consistency_check(env, policy, qbar) -> tuple[float, float, float]:
    """``Vbar_1(s1) - V^pi_1(s1)`` against ``sum_h E_pi[Qbar_h - T^pi_h Qbar_{h+1}]``."""
    tab = _tab(env)
    probs = _probs_for(tab, policy)
    q = _q_table(qbar)
    lhs = float(probs[0, tab.s1] @ q[0, tab.s1]) - float(policy_eval_exact(tab, probs).V[0, tab.s1])
    rhs = float((occupancy(tab, probs) * bellman_gaps(tab, probs, q)).sum())
    return lhs, rhs, abs(lhs - rhs)


def start_action_gap(env) -> float:
    """Gap between the best and second-best optimal Q-value at ``(h=0, s1)``."""
    table, _ = value_iteration(env)
    q = np.sort(table.Q[0, _tab(env).s1])[::-1]
    return float("inf") if q.size < 2 else float(q[0] - q[1])


def bellman_image_class(env, distractors):
    """Finite classes that always contain the true Bellman image ``R_h + P_h Vbar_{h+1}``.

    ``distractors[h]`` is an ``(n, S, A)`` array of extra candidates. Each
    returned entry is a callable ``(h, v_next) -> (n + 1, S, A)`` usable as a
    function class by the finite-class evaluator; the true image is row 0.
    """
    tab = _tab(env)

    def make(h):
        extra = np.asarray(distractors[h], dtype=np.float64).reshape(-1, tab.S, tab.A)

        def members(step, v_next):
            image = tab.R[h] + (tab.P[h] @ v_next if h < tab.H - 1 else 0.0)
            return np.concatenate([image[None], extra], axis=0)

        return members

    return [make(h) for h in range(tab.H)]


def random_distractors(env, n: int, rng: np.random.Generator) -> list[np.ndarray]:
    """``n`` uniform tables in ``[0, H - h]`` per step."""
    tab = _tab(env)
    return [rng.uniform(0.0, tab.H - h, size=(n, tab.S, tab.A)) for h in range(tab.H)]
