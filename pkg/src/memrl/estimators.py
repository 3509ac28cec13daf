"""scikit-learn style wrappers around the two training loops.

Hyperparameters are constructor arguments (so ``get_params``, ``set_params``
and ``sklearn.base.clone`` work); learned state lives in trailing-underscore
attributes set by ``fit``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .pipeline import (
    answer_sample,
    greedy_em,
    manager_episodes,
    run_episode,
    train_answer_agent,
    train_memory_manager,
)
from .policy import AnswerPolicyParameters, OperationPolicyParameters, hand_set_answer_policy
from .rl import TrainerConfig, em_reward


class _TrainerParams(BaseEstimator):
    def _config(self) -> TrainerConfig:
        return TrainerConfig(
            epsilon=self.epsilon,
            beta=self.beta,
            group_size=self.group_size,
            actor_lr=self.actor_lr,
            critic_lr=self.critic_lr,
            seed=self.seed,
            batch_size=getattr(self, "batch_size", 8),
            max_steps=self.max_steps,
            temperature=self.temperature,
        )

    def _check_fitted(self):
        if not hasattr(self, "policy_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")


class MemoryManagerEstimator(_TrainerParams):
    """Trains the memory manager against a frozen answer policy.

    ``fit(dialogues, scripts)`` takes synthetic dialogues with their oracle
    scripts (or LOCOMO dialogues with ``scripts=None``).
    """

    def __init__(
        self,
        trainer="grpo",
        actor_lr=2.0,
        critic_lr=0.05,
        beta=0.01,
        epsilon=0.2,
        group_size=4,
        max_steps=200,
        temperature=1.0,
        seed=0,
        window=50,
        answer_policy=None,
    ):
        self.trainer = trainer
        self.actor_lr = actor_lr
        self.critic_lr = critic_lr
        self.beta = beta
        self.epsilon = epsilon
        self.group_size = group_size
        self.max_steps = max_steps
        self.temperature = temperature
        self.seed = seed
        self.window = window
        self.answer_policy = answer_policy

    def _answer(self):
        return self.answer_policy if self.answer_policy is not None else hand_set_answer_policy()

    def fit(self, dialogues, scripts=None):
        episodes = manager_episodes(dialogues, scripts, window=self.window)
        result = train_memory_manager(
            episodes, OperationPolicyParameters.zeros(), self._answer(), self.trainer, self._config()
        )
        self.policy_ = result.policy
        self.log_ = result.log
        self.critic_ = result.critic
        self.n_episodes_ = len(episodes)
        return self

    def predict(self, dialogues):
        """Greedy answers to every question of each dialogue."""
        self._check_fitted()
        return [list(run_episode(d, self.policy_, self._answer()).answers) for d in dialogues]

    def score(self, dialogues, scripts=None):
        """Mean greedy exact match over all questions."""
        self._check_fitted()
        return greedy_em(dialogues, self.policy_, self._answer())


class AnswerAgentEstimator(_TrainerParams):
    """Trains the answer agent on ``AnswerTuple``s."""

    def __init__(
        self,
        trainer="grpo",
        actor_lr=1.0,
        critic_lr=0.05,
        beta=0.01,
        epsilon=0.2,
        group_size=4,
        max_steps=200,
        batch_size=8,
        temperature=1.0,
        seed=0,
        answer_rule="auto",
    ):
        self.trainer = trainer
        self.actor_lr = actor_lr
        self.critic_lr = critic_lr
        self.beta = beta
        self.epsilon = epsilon
        self.group_size = group_size
        self.max_steps = max_steps
        self.batch_size = batch_size
        self.temperature = temperature
        self.seed = seed
        self.answer_rule = answer_rule

    def fit(self, tuples, y=None):
        start = AnswerPolicyParameters(np.zeros(4), self.answer_rule)
        result = train_answer_agent(tuples, start, self.trainer, self._config())
        self.policy_ = result.policy
        self.log_ = result.log
        self.critic_ = result.critic
        return self

    def predict(self, tuples, distill=True):
        self._check_fitted()
        return [answer_sample(t.question, t.retrieved, self.policy_, 0.0, None, distill).action.answer for t in tuples]

    def score(self, tuples, y=None):
        answers = self.predict(tuples)
        return float(np.mean([em_reward(a, t.gold_answer) for a, t in zip(answers, tuples)])) if tuples else 0.0
