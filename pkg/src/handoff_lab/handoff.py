"""Handoff classifier: a one-hidden-layer MLP over the dialog state, trained with REINFORCE."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional, Sequence

import numpy as np

MODEL = 0
HUMAN = 1
ACTION_NAMES = ("model", "human")


@dataclass(frozen=True)
class RewardSpec:
    r_human: float = 1.0
    r_model_correct: float = 2.0
    r_model_incorrect: float = -4.0

    def __post_init__(self):
        if not self.r_model_correct > self.r_human > self.r_model_incorrect:
            raise ValueError("rewards must satisfy model_correct > human > model_incorrect")

    @classmethod
    def parse(cls, text: str) -> "RewardSpec":
        parts = [float(x) for x in text.replace(" ", "").split(",")]
        if len(parts) != 3:
            raise ValueError(f"reward needs three comma-separated values, got {text!r}")
        return cls(*parts)

    def label(self) -> str:
        return ",".join(f"{v:g}" for v in (self.r_human, self.r_model_correct, self.r_model_incorrect))


@dataclass
class ClassifierParams:
    W1: np.ndarray  # (d, h)
    b1: np.ndarray  # (h,)
    W2: np.ndarray  # (h, 2)
    b2: np.ndarray  # (2,)

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(**{n: a.copy() for n, a in self.items()})

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for _, a in self.items())


def init_classifier(d: int, hidden: int = 20, seed: int = 599, std: float = 0.1) -> ClassifierParams:
    rng = np.random.default_rng(seed)
    return ClassifierParams(rng.normal(0, std, (d, hidden)), rng.normal(0, std, hidden),
                            rng.normal(0, std, (hidden, 2)), rng.normal(0, std, 2))


def _forward(s: np.ndarray, params: ClassifierParams):
    h = np.tanh(s @ params.W1 + params.b1)
    z = h @ params.W2 + params.b2
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return h, e / e.sum(axis=-1, keepdims=True)


def policy(s: np.ndarray, params: ClassifierParams) -> np.ndarray:
    """Action probabilities (model, human) for one state or a batch of states."""
    return _forward(np.asarray(s, dtype=float), params)[1]


def sample_action(probs: np.ndarray, rng: np.random.Generator) -> tuple[int, float]:
    action = MODEL if rng.random() < probs[MODEL] else HUMAN
    return action, float(probs[action])


def reward(action: int, model_correct: bool, spec: RewardSpec) -> float:
    if action == HUMAN:
        return spec.r_human
    return spec.r_model_correct if model_correct else spec.r_model_incorrect


@dataclass(frozen=True)
class DecisionEpisode:
    state: np.ndarray
    action: int
    action_prob: float
    reward: float
    instance: int = -1


def surrogate(states: np.ndarray, actions: np.ndarray, rewards: np.ndarray,
              params: ClassifierParams) -> float:
    """Mean of reward * log pi(action | state) over the episodes."""
    _, probs = _forward(states, params)
    return float(np.mean(rewards * np.log(probs[np.arange(len(actions)), actions])))


def reinforce_gradients(states: np.ndarray, actions: np.ndarray, rewards: np.ndarray,
                        params: ClassifierParams) -> tuple[ClassifierParams, np.ndarray]:
    """Gradient of `surrogate` w.r.t. the classifier params and w.r.t. each state."""
    n = len(actions)
    h, probs = _forward(states, params)
    dz = -probs
    dz[np.arange(n), actions] += 1.0
    dz *= (rewards / n)[:, None]
    dh = dz @ params.W2.T
    dpre = dh * (1.0 - h * h)
    grads = ClassifierParams(states.T @ dpre, dpre.sum(axis=0), h.T @ dz, dz.sum(axis=0))
    return grads, dpre @ params.W1.T


def reinforce_update(episodes: Sequence[DecisionEpisode], params: ClassifierParams, lr: float,
                     want_state_grads: bool = False) -> tuple[ClassifierParams, Optional[np.ndarray]]:
    """One gradient-ascent step on the REINFORCE surrogate (no baseline).

    Returned state gradients are d(surrogate)/d(state) for each episode.
    """
    if not episodes:
        raise ValueError("no episodes")
    states = np.stack([e.state for e in episodes])
    actions = np.array([e.action for e in episodes])
    rewards = np.array([e.reward for e in episodes], dtype=float)
    grads, state_grads = reinforce_gradients(states, actions, rewards, params)
    new = ClassifierParams(**{n: a + lr * getattr(grads, n) for n, a in params.items()})
    if not new.all_finite():
        raise FloatingPointError("non-finite classifier update")
    return new, (state_grads if want_state_grads else None)
