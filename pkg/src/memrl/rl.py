"""Rewards, PPO and GRPO objectives, and their analytic single-step updates.

Both trainers take exactly one gradient-ascent step per batch. Gradients are
closed-form (see ``policy``) and checked against finite differences in the
test suite.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import GroupTooSmall, MissingLogProb, NonFiniteGradient
from .metrics import exact_match
from .policy import PolicySample, _unwrap, save_params


def em_reward(pred: str, gold: str) -> int:
    return int(exact_match(pred, gold))


def clipped_surrogate(rho, advantage, epsilon: float):
    """``min(rho * A, clip(rho, 1 - eps, 1 + eps) * A)``, elementwise."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise ValueError("ratio must be positive")
    advantage = np.asarray(advantage, dtype=float)
    out = np.minimum(rho * advantage, np.clip(rho, 1.0 - epsilon, 1.0 + epsilon) * advantage)
    return float(out) if out.ndim == 0 else out


def surrogate_is_active(rho, advantage, epsilon: float):
    """Where the unclipped branch carries gradient through the min."""
    rho = np.asarray(rho, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    return np.where(advantage >= 0, rho <= 1.0 + epsilon, rho >= 1.0 - epsilon)


def group_advantages(rewards: Sequence[float]) -> np.ndarray:
    """Standardise rewards within a group (population std); an all-equal group gives zeros."""
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise GroupTooSmall(f"group advantages need at least 2 rewards, got {r.size}")
    centred = r - r.mean()
    std = math.sqrt(float(np.mean(centred**2)))
    if std == 0.0:
        return np.zeros_like(r)
    adv = centred / std
    # second pass removes the rounding left in the mean by the first
    adv -= adv.mean()
    return adv / math.sqrt(float(np.mean(adv**2)))


@dataclass(frozen=True)
class TrainerConfig:
    epsilon: float = 0.2
    beta: float = 0.01
    group_size: int = 4
    actor_lr: float = 1e-6
    critic_lr: float = 1e-5
    seed: int = 0
    batch_size: int = 8
    max_steps: int = 200
    temperature: float = 1.0
    checkpoint_every: int = 0

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must be in (0, 1), got {self.epsilon}")
        if not self.beta >= 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.group_size < 1:
            raise ValueError(f"group_size must be >= 1, got {self.group_size}")
        for name in ("actor_lr", "critic_lr"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be finite and >= 0, got {value}")
        if not self.temperature > 0:
            raise ValueError("training temperature must be > 0")
        if self.batch_size < 1 or self.max_steps < 0:
            raise ValueError("batch_size must be >= 1 and max_steps >= 0")

    def require_groups(self):
        if self.group_size < 2:
            raise GroupTooSmall(f"GRPO needs group_size >= 2, got {self.group_size}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Trajectory:
    """One sampled action with its reward and the behaviour-policy log-prob."""

    sample: PolicySample
    reward: float
    log_prob_old: float | None = None

    def __post_init__(self):
        if self.log_prob_old is None:
            object.__setattr__(self, "log_prob_old", self.sample.log_prob)

    @property
    def state(self):
        return self.sample.state

    @property
    def choice(self):
        return self.sample.choice

    @property
    def temperature(self) -> float:
        return self.sample.temperature

    @property
    def state_features(self) -> np.ndarray:
        return critic_features(self.sample.state)


@dataclass(frozen=True)
class GroupSample:
    """G candidates sampled for one shared state."""

    candidates: tuple[Trajectory, ...]

    def __post_init__(self):
        candidates = tuple(self.candidates)
        object.__setattr__(self, "candidates", candidates)
        if len(candidates) < 2:
            raise GroupTooSmall(f"a group needs at least 2 candidates, got {len(candidates)}")
        first = np.asarray(candidates[0].state)
        for other in candidates[1:]:
            if not np.array_equal(first, np.asarray(other.state)):
                raise ValueError("group candidates must share one state")

    @property
    def G(self) -> int:
        return len(self.candidates)

    @property
    def state(self):
        return self.candidates[0].state

    @property
    def temperature(self) -> float:
        return self.candidates[0].temperature

    def rewards(self) -> np.ndarray:
        return np.array([c.reward for c in self.candidates], dtype=float)


@dataclass(frozen=True, eq=False)
class CriticParameters:
    """Linear value estimate ``V(s) = w . x(s)`` over ``critic_features``."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float, copy=True)
        if w.ndim != 1 or not np.all(np.isfinite(w)):
            raise ValueError("critic weights must be a finite vector")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def zeros(cls, n: int) -> "CriticParameters":
        return cls(np.zeros(n))

    def value(self, x) -> float:
        return float(np.dot(self.weights, x))


def critic_features(state) -> np.ndarray:
    """Fixed-length critic input: the manager feature vector, or column means of the answer matrix."""
    state = np.asarray(state, dtype=float)
    if state.ndim == 1:
        return state
    if state.shape[0] == 0:
        out = np.zeros(state.shape[1])
        out[-1] = 1.0
        return out
    return state.mean(axis=0)


def _check_logged(trajectories: Iterable[Trajectory]):
    for t in trajectories:
        if t.log_prob_old is None or t.state is None:
            raise MissingLogProb("trajectory has no logged log-probability (LLM-backed sample?)")


def importance_ratio(params, trajectory: Trajectory) -> float:
    params = _unwrap(params)
    log_new = params.log_prob(trajectory.state, trajectory.choice, trajectory.temperature)
    return math.exp(log_new - trajectory.log_prob_old)


def kl_estimate(params, reference, states, tau: float = 1.0) -> float:
    """Mean exact KL(params || reference) over a batch of states."""
    states = list(states)
    if not states:
        raise ValueError("KL needs at least one state")
    params = _unwrap(params)
    reference = _unwrap(reference)
    return float(np.mean([params.kl(reference, s, tau) for s in states]))


def _groups(groups) -> list[GroupSample]:
    return [groups] if isinstance(groups, GroupSample) else list(groups)


def grpo_objective(groups, params, reference, config: TrainerConfig) -> float:
    """Mean over groups of ``(1/G) sum_i rho_i A_i - beta * KL``."""
    groups = _groups(groups)
    params = _unwrap(params)
    reference = _unwrap(reference)
    total = 0.0
    for group in groups:
        _check_logged(group.candidates)
        adv = group_advantages(group.rewards())
        rho = np.array([importance_ratio(params, c) for c in group.candidates])
        total += float(np.mean(rho * adv)) - config.beta * params.kl(reference, group.state, group.temperature)
    return total / len(groups)


def grpo_gradient(groups, params, reference, config: TrainerConfig) -> np.ndarray:
    groups = _groups(groups)
    params = _unwrap(params)
    reference = _unwrap(reference)
    grad = np.zeros_like(params.theta)
    for group in groups:
        _check_logged(group.candidates)
        adv = group_advantages(group.rewards())
        for c, a in zip(group.candidates, adv):
            if a != 0.0:
                grad += importance_ratio(params, c) * a * params.grad_log_prob(c.state, c.choice, c.temperature) / group.G
        if config.beta:
            grad -= config.beta * params.grad_kl(reference, group.state, group.temperature)
    return grad / len(groups)


def ppo_advantages(batch: Sequence[Trajectory], critic: CriticParameters) -> np.ndarray:
    return np.array([t.reward - critic.value(t.state_features) for t in batch])


def ppo_surrogate(batch: Sequence[Trajectory], params, advantages, epsilon: float) -> float:
    params = _unwrap(params)
    rho = np.array([importance_ratio(params, t) for t in batch])
    return float(np.mean(clipped_surrogate(rho, advantages, epsilon)))


def ppo_gradient(batch: Sequence[Trajectory], params, advantages, epsilon: float) -> np.ndarray:
    params = _unwrap(params)
    grad = np.zeros_like(params.theta)
    for t, a in zip(batch, advantages):
        rho = importance_ratio(params, t)
        if a != 0.0 and surrogate_is_active(rho, a, epsilon):
            grad += rho * a * params.grad_log_prob(t.state, t.choice, t.temperature)
    return grad / len(batch)


def critic_loss(batch: Sequence[Trajectory], critic: CriticParameters) -> float:
    return float(np.mean([(critic.value(t.state_features) - t.reward) ** 2 for t in batch]))


def critic_gradient(batch: Sequence[Trajectory], critic: CriticParameters) -> np.ndarray:
    grad = np.zeros_like(critic.weights)
    for t in batch:
        x = t.state_features
        grad += 2.0 * (critic.value(x) - t.reward) * x
    return grad / len(batch)


def _finite_ratios(rho: np.ndarray) -> np.ndarray:
    # a NaN ratio would fail every clip test and silently zero its gradient term
    if not np.all(np.isfinite(rho)):
        raise NonFiniteGradient("importance ratios are not finite; step aborted")
    return rho


def _finite(grad: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient(f"{what} gradient is not finite; step aborted")
    return grad


def ppo_update_step(batch: Sequence[Trajectory], actor, critic: CriticParameters, config: TrainerConfig):
    """One clipped-surrogate ascent step for the actor and one squared-error descent step for the critic."""
    batch = list(batch)
    if not batch:
        raise ValueError("empty batch")
    _check_logged(batch)
    actor = _unwrap(actor)
    adv = ppo_advantages(batch, critic)
    rho = _finite_ratios(np.array([importance_ratio(actor, t) for t in batch]))
    g_actor = _finite(ppo_gradient(batch, actor, adv, config.epsilon), "actor")
    g_critic = _finite(critic_gradient(batch, critic), "critic")
    new_actor = actor.with_theta(actor.theta + config.actor_lr * g_actor)
    new_critic = CriticParameters(critic.weights - config.critic_lr * g_critic)
    clipped = (np.abs(rho - 1.0) > config.epsilon) & ~surrogate_is_active(rho, adv, config.epsilon)
    diagnostics = {
        "mean_reward": float(np.mean([t.reward for t in batch])),
        "mean_ratio": float(rho.mean()),
        "clip_fraction": float(clipped.mean()),
        "surrogate": float(np.mean(clipped_surrogate(rho, adv, config.epsilon))),
        "critic_loss": critic_loss(batch, critic),
        "grad_norm": float(np.linalg.norm(g_actor)),
    }
    return new_actor, new_critic, diagnostics


def grpo_update_step(groups, actor, reference, config: TrainerConfig):
    """One ascent step on the group-relative objective. No value function is involved."""
    groups = _groups(groups)
    if not groups:
        raise ValueError("empty batch")
    actor = _unwrap(actor)
    _finite_ratios(np.array([importance_ratio(actor, c) for g in groups for c in g.candidates]))
    grad = _finite(grpo_gradient(groups, actor, reference, config), "actor")
    new_actor = actor.with_theta(actor.theta + config.actor_lr * grad)
    spreads = [float(np.ptp(group_advantages(g.rewards()))) for g in groups]
    rho = np.array([importance_ratio(actor, c) for g in groups for c in g.candidates])
    diagnostics = {
        "mean_reward": float(np.mean([g.rewards().mean() for g in groups])),
        "mean_ratio": float(rho.mean()),
        "clip_fraction": 0.0,
        "objective": grpo_objective(groups, actor, reference, config),
        "kl": kl_estimate(actor, reference, [g.state for g in groups], groups[0].temperature),
        "advantage_spread": float(np.mean(spreads)),
        "degenerate_groups": int(sum(s == 0.0 for s in spreads)),
        "grad_norm": float(np.linalg.norm(grad)),
    }
    return new_actor, diagnostics


# ---------------------------------------------------------------------------
# logs and checkpoints
# ---------------------------------------------------------------------------


@dataclass
class TrainingLog:
    """Per-step training records, written as line-delimited JSON."""

    records: list[dict] = field(default_factory=list)

    def append(self, step: int, diagnostics: dict, **extra):
        record = {
            "step": step,
            "mean_reward": diagnostics.get("mean_reward"),
            "clip_fraction": diagnostics.get("clip_fraction"),
            "kl": diagnostics.get("kl"),
            "loss": -diagnostics.get("objective", diagnostics.get("surrogate", 0.0)),
        }
        record.update(extra)
        self.records.append(record)
        return record

    def curve(self, key: str = "mean_reward") -> list[float]:
        return [r[key] for r in self.records]

    def dumps(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def write(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


def steps_to_fraction(curve: Sequence[float], fraction: float = 0.8, final: float | None = None) -> int | None:
    """First step index at which ``curve`` reaches ``fraction`` of its final value."""
    if not curve:
        return None
    target = fraction * (curve[-1] if final is None else final)
    for i, value in enumerate(curve):
        if value >= target:
            return i
    return None


def save_checkpoint(directory, step: int, params, config: TrainerConfig, name: str = "actor") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{name}-step{step:05d}.params"
    save_params(params, path)
    with open(directory / f"{name}-step{step:05d}.config.json", "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, sort_keys=True, indent=2)
    return path


__all__ = [
    "em_reward",
    "clipped_surrogate",
    "surrogate_is_active",
    "group_advantages",
    "TrainerConfig",
    "Trajectory",
    "GroupSample",
    "CriticParameters",
    "critic_features",
    "importance_ratio",
    "kl_estimate",
    "grpo_objective",
    "grpo_gradient",
    "ppo_advantages",
    "ppo_surrogate",
    "ppo_gradient",
    "critic_loss",
    "critic_gradient",
    "ppo_update_step",
    "grpo_update_step",
    "TrainingLog",
    "steps_to_fraction",
    "save_checkpoint",
]
