"""Episodic finite-horizon MDPs: tabular and linear specs, episode sampling, generators.

Steps are indexed ``h = 0..H-1`` throughout; the text calls the same steps
``1..H``. Transition tensors are laid out ``P[h, s, a, s']`` and rewards
``R[h, s, a]``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterator, Union

import numpy as np

from . import kvtext
from .errors import ConfigurationError, ValidationError
from .policy import policy_probs

ROW_SUM_TOL = 1e-12
LINEAR_ROW_SUM_TOL = 1e-10
DUST_TOL = 1e-12
TERMINAL = -1


class RewardNoise(str, enum.Enum):
    DETERMINISTIC = "deterministic"
    BERNOULLI = "bernoulli"


def _noise(value) -> RewardNoise:
    try:
        return RewardNoise(str(getattr(value, "value", value)).lower())
    except ValueError:
        raise ValidationError(f"unknown reward_noise {value!r}") from None


@dataclass(frozen=True, eq=False)
class TabularMDPSpec:
    S: int
    A: int
    H: int
    P: np.ndarray
    R: np.ndarray
    s1: int = 0
    reward_noise: RewardNoise = RewardNoise.DETERMINISTIC

    def __post_init__(self):
        P = np.array(self.P, dtype=np.float64)
        R = np.array(self.R, dtype=np.float64)
        P.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "reward_noise", _noise(self.reward_noise))
        S, A, H = self.S, self.A, self.H
        if min(S, A, H) < 1:
            raise ValidationError("S, A and H must be positive")
        if P.shape != (H, S, A, S):
            raise ValidationError(f"P has shape {P.shape}, expected {(H, S, A, S)}")
        if R.shape != (H, S, A):
            raise ValidationError(f"R has shape {R.shape}, expected {(H, S, A)}")
        if not 0 <= self.s1 < S:
            raise ValidationError(f"initial state {self.s1} outside [0, {S})")
        bad_rows = np.argwhere((np.abs(P.sum(axis=-1) - 1.0) > ROW_SUM_TOL) | (P < 0).any(axis=-1))
        if len(bad_rows):
            raise ValidationError(
                "transition rows are not distributions", [tuple(map(int, r)) for r in bad_rows]
            )
        bad_r = np.argwhere((R < 0) | (R > 1) | ~np.isfinite(R))
        if len(bad_r):
            raise ValidationError("rewards outside [0, 1]", [tuple(map(int, r)) for r in bad_r])

    @property
    def tabular(self) -> "TabularMDPSpec":
        return self


@dataclass(frozen=True, eq=False)
class LinearMDPSpec:
    """Linear MDP over finite S: ``P_h(s'|s,a) = <phi_h(s,a), psi_h(s')>``, ``R_h = <phi_h, w_h>``.

    Construction only checks shapes; :meth:`validate` checks the regularity
    and normalization invariants.
    """

    d: int
    H: int
    S: int
    A: int
    phi: np.ndarray  # (H, S, A, d)
    psi: np.ndarray  # (H, S, d), indexed by next state
    w_star: np.ndarray  # (H, d)
    s1: int = 0
    reward_noise: RewardNoise = RewardNoise.DETERMINISTIC

    def __post_init__(self):
        for name in ("phi", "psi", "w_star"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "reward_noise", _noise(self.reward_noise))
        d, H, S, A = self.d, self.H, self.S, self.A
        if min(d, H, S, A) < 1:
            raise ValidationError("d, H, S and A must be positive")
        expected = {"phi": (H, S, A, d), "psi": (H, S, d), "w_star": (H, d)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValidationError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if not 0 <= self.s1 < S:
            raise ValidationError(f"initial state {self.s1} outside [0, {S})")

    def bilinear(self) -> tuple[np.ndarray, np.ndarray]:
        P = np.einsum("hsad,htd->hsat", self.phi, self.psi)
        R = np.einsum("hsad,hd->hsa", self.phi, self.w_star)
        return P, R

    def violations(self) -> list[tuple[str, tuple[int, ...]]]:
        out = []
        norms = np.linalg.norm(self.phi, axis=-1)
        out += [("phi norm > 1", tuple(map(int, i))) for i in np.argwhere(norms > 1 + DUST_TOL)]
        wn = np.linalg.norm(self.w_star, axis=-1)
        out += [("w_star norm > sqrt(d)", (int(h),)) for h in np.flatnonzero(wn > np.sqrt(self.d) + DUST_TOL)]
        P, R = self.bilinear()
        neg = (P < -DUST_TOL).any(axis=-1)
        rows = np.abs(P.sum(axis=-1) - 1.0) > LINEAR_ROW_SUM_TOL
        out += [("transition row invalid", tuple(map(int, i))) for i in np.argwhere(neg | rows)]
        out += [
            ("reward outside [0, 1]", tuple(map(int, i)))
            for i in np.argwhere((R < -DUST_TOL) | (R > 1 + DUST_TOL))
        ]
        return out

    def validate(self) -> "LinearMDPSpec":
        bad = self.violations()
        if bad:
            raise ValidationError(
                f"linear MDP violates {len(bad)} invariant(s); first: {bad[0][0]} at {bad[0][1]}",
                [idx for _, idx in bad],
            )
        return self

    @cached_property
    def tabular(self) -> TabularMDPSpec:
        return linear_to_tabular(self)

    @property
    def features(self) -> np.ndarray:
        return self.phi


Env = Union[TabularMDPSpec, LinearMDPSpec]


@dataclass(frozen=True)
class Trajectory:
    """H steps of ``(state, action, reward, next_state)``; the last next_state is ``None``."""

    steps: tuple[tuple[int, int, float, int | None], ...]

    def __len__(self):
        return len(self.steps)

    def __iter__(self) -> Iterator[tuple[int, int, float, int | None]]:
        return iter(self.steps)


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """N trajectories stored as ``(N, H)`` arrays; ``next_states[:, -1] == TERMINAL``."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray

    def __len__(self):
        return self.states.shape[0]

    @property
    def H(self) -> int:
        return self.states.shape[1]

    def __getitem__(self, i: int) -> Trajectory:
        steps = []
        for h in range(self.H):
            nxt = int(self.next_states[i, h])
            steps.append(
                (int(self.states[i, h]), int(self.actions[i, h]), float(self.rewards[i, h]),
                 None if nxt == TERMINAL else nxt)
            )
        return Trajectory(tuple(steps))

    def __iter__(self) -> Iterator[Trajectory]:
        return (self[i] for i in range(len(self)))

    @classmethod
    def from_trajectories(cls, trajectories) -> "TrajectoryBatch":
        trajectories = list(trajectories)
        if not trajectories:
            raise ConfigurationError("no trajectories given")
        H = len(trajectories[0])
        if any(len(t) != H for t in trajectories):
            raise ConfigurationError("trajectories have different lengths")
        st = np.array([[step[0] for step in t] for t in trajectories], dtype=np.int64)
        ac = np.array([[step[1] for step in t] for t in trajectories], dtype=np.int64)
        rw = np.array([[step[2] for step in t] for t in trajectories], dtype=np.float64)
        nx = np.array(
            [[TERMINAL if step[3] is None else step[3] for step in t] for t in trajectories],
            dtype=np.int64,
        )
        return cls(st, ac, rw, nx)


def _cdf(probs: np.ndarray) -> np.ndarray:
    # Normalizing by the last cumulative entry keeps zero-probability tails unreachable.
    c = np.cumsum(probs, axis=-1)
    return c / c[..., -1:]


def _inverse_cdf(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    return _draw(_cdf(probs), u)


def _draw(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    return (u[..., None] >= cdf).sum(axis=-1)


def _check_horizon(env: Env, probs: np.ndarray) -> None:
    if probs.shape[0] != env.H:
        raise ConfigurationError(f"policy horizon {probs.shape[0]} != env horizon {env.H}")
    if probs.shape[1:] != (env.S, env.A):
        raise ConfigurationError(
            f"policy shape {probs.shape[1:]} does not match env (S, A) = {(env.S, env.A)}"
        )


def sample_episode(env: Env, policy, rng: np.random.Generator) -> Trajectory:
    """Roll out one episode from ``s1``."""
    probs = policy_probs(policy)
    _check_horizon(env, probs)
    tab = env.tabular
    s = tab.s1
    steps = []
    for h in range(tab.H):
        a = int(_inverse_cdf(probs[h, s], np.asarray(rng.random())))
        mean = tab.R[h, s, a]
        r = float(rng.random() < mean) if tab.reward_noise is RewardNoise.BERNOULLI else float(mean)
        if h < tab.H - 1:
            nxt = int(_inverse_cdf(tab.P[h, s, a], np.asarray(rng.random())))
        else:
            nxt = None
        steps.append((int(s), a, r, nxt))
        s = nxt
    return Trajectory(tuple(steps))


def sample_episodes(env: Env, policy, n: int, rng: np.random.Generator) -> TrajectoryBatch:
    """Roll out ``n`` independent episodes at once, one vectorized step at a time."""
    probs = policy_probs(policy)
    _check_horizon(env, probs)
    tab = env.tabular
    H = tab.H
    states = np.empty((n, H), dtype=np.int64)
    actions = np.empty((n, H), dtype=np.int64)
    rewards = np.empty((n, H), dtype=np.float64)
    next_states = np.full((n, H), TERMINAL, dtype=np.int64)
    s = np.full(n, tab.s1, dtype=np.int64)
    bernoulli = tab.reward_noise is RewardNoise.BERNOULLI
    policy_cdf = _cdf(probs)
    trans_cdf = _cdf(tab.P)
    for h in range(H):
        states[:, h] = s
        a = _draw(policy_cdf[h, s], rng.random(n))
        actions[:, h] = a
        mean = tab.R[h, s, a]
        rewards[:, h] = (rng.random(n) < mean).astype(np.float64) if bernoulli else mean
        if h < H - 1:
            s = _draw(trans_cdf[h, s, a], rng.random(n))
            next_states[:, h] = s
    return TrajectoryBatch(states, actions, rewards, next_states)


def linear_to_tabular(spec: LinearMDPSpec) -> TabularMDPSpec:
    spec.validate()
    P, R = spec.bilinear()
    dusty = (P < 0).any(axis=-1)
    if dusty.any():
        P = np.where(P < 0, 0.0, P)
        P[dusty] /= P[dusty].sum(axis=-1, keepdims=True)
    R = np.clip(R, 0.0, 1.0)
    return TabularMDPSpec(spec.S, spec.A, spec.H, P, R, spec.s1, spec.reward_noise)


def tabular_as_linear(spec: TabularMDPSpec) -> LinearMDPSpec:
    """Embed a tabular MDP with one-hot ``(s, a)`` features, ``d = S * A``."""
    S, A, H = spec.S, spec.A, spec.H
    d = S * A
    phi = np.zeros((H, S, A, d))
    idx = np.arange(d).reshape(S, A)
    for s in range(S):
        for a in range(A):
            phi[:, s, a, idx[s, a]] = 1.0
    psi = spec.P.reshape(H, d, S).transpose(0, 2, 1)
    w_star = spec.R.reshape(H, d)
    return LinearMDPSpec(d, H, S, A, phi, psi, w_star, spec.s1, spec.reward_noise)


def make_random_linear(
    d: int,
    S: int,
    A: int,
    H: int,
    rng: np.random.Generator,
    *,
    concentration: float = 1.0,
    reward_noise: RewardNoise = RewardNoise.DETERMINISTIC,
) -> LinearMDPSpec:
    """Latent-mixture linear MDP.

    Each ``phi_h(s, a)`` is a Dirichlet-distributed weighting over ``d``
    latent components, each component emits next states from its own
    distribution (the columns of ``psi_h``), and ``w_star`` is uniform on
    ``[0, 1]^d``.
    """
    if d < 1:
        raise ConfigurationError("d must be >= 1")
    phi = rng.dirichlet(np.full(d, concentration), size=(H, S, A))
    emissions = rng.dirichlet(np.ones(S), size=(H, d))  # (H, d, S)
    psi = emissions.transpose(0, 2, 1)
    w_star = rng.uniform(0.0, 1.0, size=(H, d))
    return LinearMDPSpec(d, H, S, A, phi, psi, w_star, 0, reward_noise).validate()


def make_random_tabular(
    S: int,
    A: int,
    H: int,
    rng: np.random.Generator,
    *,
    concentration: float = 1.0,
    reward_noise: RewardNoise = RewardNoise.DETERMINISTIC,
) -> TabularMDPSpec:
    P = rng.dirichlet(np.full(S, concentration), size=(H, S, A))
    R = rng.uniform(0.0, 1.0, size=(H, S, A))
    return TabularMDPSpec(S, A, H, P, R, 0, reward_noise)


def make_deterministic_tabular(S: int, A: int, H: int, rng: np.random.Generator) -> TabularMDPSpec:
    """Random MDP whose every ``(h, s, a)`` leads to a single next state."""
    nxt = rng.integers(0, S, size=(H, S, A))
    P = np.zeros((H, S, A, S))
    np.put_along_axis(P, nxt[..., None], 1.0, axis=-1)
    R = rng.uniform(0.0, 1.0, size=(H, S, A))
    return TabularMDPSpec(S, A, H, P, R, 0)


def make_gap_tabular(
    S: int, A: int, H: int, rng: np.random.Generator, *, gap: float = 0.3, max_tries: int = 10_000
) -> TabularMDPSpec:
    """Random tabular MDP whose best first action beats every other one by at least ``gap``."""
    from .oracle import start_action_gap

    for _ in range(max_tries):
        env = make_random_tabular(S, A, H, rng)
        if start_action_gap(env) >= gap:
            return env
    raise ConfigurationError(f"no environment with start gap >= {gap} in {max_tries} draws")


# -- text serialization ----------------------------------------------------


def env_to_dict(env: Env) -> dict:
    common = {"S": env.S, "A": env.A, "H": env.H}
    if isinstance(env, LinearMDPSpec):
        return {"kind": "linear", **common, "d": env.d, "s1": env.s1,
                "reward_noise": env.reward_noise.value,
                "phi": env.phi, "psi": env.psi, "w_star": env.w_star}
    return {"kind": "tabular", **common, "s1": env.s1, "reward_noise": env.reward_noise.value,
            "P": env.P, "R": env.R}


def env_from_dict(data: dict) -> Env:
    kind = str(data.get("kind", "")).lower()
    try:
        if kind == "tabular":
            return TabularMDPSpec(int(data["S"]), int(data["A"]), int(data["H"]),
                                  data["P"], data["R"], int(data.get("s1", 0)),
                                  data.get("reward_noise", "deterministic"))
        if kind == "linear":
            return LinearMDPSpec(int(data["d"]), int(data["H"]), int(data["S"]), int(data["A"]),
                                 data["phi"], data["psi"], data["w_star"], int(data.get("s1", 0)),
                                 data.get("reward_noise", "deterministic")).validate()
    except KeyError as exc:
        raise ValidationError(f"environment is missing key {exc.args[0]!r}") from None
    raise ValidationError(f"unknown environment kind {kind!r}")


def dumps_env(env: Env) -> str:
    return kvtext.dumps(env_to_dict(env))


def loads_env(text: str) -> Env:
    return env_from_dict(kvtext.loads(text))


def save_env(env: Env, path) -> None:
    Path(path).write_text(dumps_env(env), encoding="utf-8")


def load_env(path) -> Env:
    return loads_env(Path(path).read_text(encoding="utf-8"))
