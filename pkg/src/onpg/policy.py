"""Softmax policies driven by accumulated mirror-ascent logits."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


def _canonical(logits: np.ndarray) -> np.ndarray:
    out = logits - logits.max(axis=-1, keepdims=True)
    out.setflags(write=False)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class PolicyState:
    """Policy ``pi^k_h(.|s) ∝ exp(logits[h, s])``; logits are stored max-subtracted per (h, s).

    ``k`` is the 1-based iteration index: the uniform initial policy is ``k = 1``
    and every mirror-ascent step increments it.
    """

    logits: np.ndarray
    eta: float
    k: int = 1

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=np.float64)
        if logits.ndim != 3:
            raise ValidationError(f"logits must be (H, S, A), got shape {logits.shape}")
        if not np.isfinite(logits).all():
            raise ValidationError("logits must be finite")
        if not self.eta > 0:
            raise ValidationError("eta must be positive")
        object.__setattr__(self, "logits", _canonical(logits))

    @property
    def H(self) -> int:
        return self.logits.shape[0]

    @property
    def S(self) -> int:
        return self.logits.shape[1]

    @property
    def A(self) -> int:
        return self.logits.shape[2]

    @property
    def probs(self) -> np.ndarray:
        return softmax(self.logits)

    def to_dict(self) -> dict:
        return {"eta": self.eta, "k": self.k, "shape": list(self.logits.shape),
                "logits": self.logits.ravel().tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "PolicyState":
        logits = np.asarray(data["logits"], dtype=np.float64).reshape(data["shape"])
        return cls(logits, float(data["eta"]), int(data["k"]))

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "PolicyState":
        return cls.from_dict(json.loads(text))


def policy_probs(policy) -> np.ndarray:
    """Action probabilities ``(H, S, A)`` of a PolicyState or a raw probability tensor."""
    if isinstance(policy, PolicyState):
        return policy.probs
    return np.asarray(policy, dtype=np.float64)


def uniform_policy(H: int, S: int, A: int, eta: float) -> PolicyState:
    if A < 1:
        raise ValidationError("need at least one action")
    return PolicyState(np.zeros((H, S, A)), eta, 1)


def mirror_ascent_step(policy: PolicyState, qbar) -> PolicyState:
    """``pi^{k+1}_h(.|s) ∝ pi^k_h(.|s) exp(eta * Qbar_h(s, .))``."""
    q = np.asarray(getattr(qbar, "q", qbar), dtype=np.float64)
    if q.shape != policy.logits.shape:
        raise ValidationError(f"Qbar shape {q.shape} does not match policy {policy.logits.shape}")
    if not np.isfinite(q).all():
        raise ValidationError("Qbar has non-finite entries")
    return PolicyState(policy.logits + policy.eta * q, policy.eta, policy.k + 1)


def action_probs(policy: PolicyState, h: int, s: int) -> np.ndarray:
    return softmax(policy.logits[h, s])


def sample_action(policy: PolicyState, h: int, s: int, rng: np.random.Generator) -> int:
    p = action_probs(policy, h, s)
    c = np.cumsum(p)
    return int(np.searchsorted(c / c[-1], rng.random(), side="right"))


def entropy(policy: PolicyState) -> np.ndarray:
    p = policy.probs
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=-1)
