"""End-to-end flows: bank construction, answering, the two training loops and evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, NamedTuple, Sequence

import numpy as np

from .answer_rules import UNKNOWN
from .dataset import Dialogue, ManagerTuple, QAPair, build_answer_tuples, build_manager_tuples
from .exceptions import EmptyInput, JudgeUnavailable, NonFiniteGradient
from .extraction import RuleExtractor, extract_facts
from .memory import MemoryBank, MemoryOperationDecision, OperationOutcome
from .metrics import JudgeLabel, aggregate_report, average_reports, judge_many, score_answer
from .policy import (
    AnswerPolicyParameters,
    OperationPolicyParameters,
    PolicySample,
    _unwrap,
    answer_policy_sample,
    freeze_reference,
    op_features,
    op_policy_sample,
)
from .retrieval import ANSWER_K, MANAGER_K, RankedRetrieval, Retriever, speakers_in
from .rl import (
    CriticParameters,
    GroupSample,
    TrainerConfig,
    TrainingLog,
    Trajectory,
    em_reward,
    grpo_update_step,
    ppo_update_step,
    save_checkpoint,
)
from .synthetic import SyntheticScript, oracle_bootstrap, oracle_decision

logger = logging.getLogger(__name__)

TRAINERS = ("grpo", "ppo")


# ---------------------------------------------------------------------------
# bank construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceStep:
    fact: Any
    retrieved: RankedRetrieval
    decision: MemoryOperationDecision
    outcome: OperationOutcome
    sample: PolicySample | None = None


class OracleOperationPolicy:
    """Applies the scripted ground-truth operations of synthetic dialogues."""

    def __init__(self, scripts: dict[str, SyntheticScript]):
        self.scripts = dict(scripts)
        self._script: SyntheticScript | None = None

    def bind(self, dialogue: Dialogue) -> "OracleOperationPolicy":
        bound = OracleOperationPolicy(self.scripts)
        bound._script = self.scripts[dialogue.dialogue_id]
        return bound

    def sample(self, fact, retrieved: RankedRetrieval, bank: MemoryBank) -> PolicySample:
        if self._script is None:
            raise RuntimeError("oracle policy used without bind(dialogue)")
        return PolicySample(oracle_decision(self._script, fact, bank), None, 0.0)


def manager_retrieval(fact, bank: MemoryBank, retriever: Retriever, k: int = MANAGER_K) -> RankedRetrieval:
    """Top-k among the fact speaker's own memories (all memories if the fact is unattributed)."""
    speaker = getattr(fact, "speaker", None)
    where = None if speaker is None else (lambda e: e.speaker == speaker)
    return retriever.retrieve(fact.text, bank, k, where=where)


def decide(op_policy, fact, retrieved: RankedRetrieval, bank: MemoryBank, tau: float, rng) -> PolicySample:
    """Sample a manager decision from parameters or from any object with ``sample(fact, retrieved, bank)``."""
    if isinstance(_unwrap(op_policy), OperationPolicyParameters):
        return op_policy_sample(fact, retrieved, op_policy, tau, rng)
    return op_policy.sample(fact, retrieved, bank)


def _decisions(sample: PolicySample) -> list[MemoryOperationDecision]:
    action = sample.action
    return list(action) if isinstance(action, (list, tuple)) else [action]


def construct_memory_bank(
    dialogue: Dialogue,
    op_policy,
    extractor=None,
    tau: float = 0.0,
    rng=None,
    retriever: Retriever | None = None,
    k: int = MANAGER_K,
):
    """Run the manager over every extracted fact in turn order; returns ``(bank, trace)``."""
    extractor = extractor or RuleExtractor()
    retriever = retriever or Retriever()
    if hasattr(op_policy, "bind"):
        op_policy = op_policy.bind(dialogue)
    bank = MemoryBank()
    trace: list[TraceStep] = []
    for turn in dialogue.turns:
        for fact in extract_facts(turn, extractor):
            retrieved = manager_retrieval(fact, bank, retriever, k)
            sample = decide(op_policy, fact, retrieved, bank, tau, rng)
            for decision in _decisions(sample):
                outcome = bank.apply(decision)
                trace.append(TraceStep(fact, retrieved, decision, outcome, sample))
    return bank, trace


# ---------------------------------------------------------------------------
# answering
# ---------------------------------------------------------------------------


class AnswerResult(NamedTuple):
    answer: str
    distilled_ids: tuple[str, ...]
    log_prob: float | None


def answer_retrieval(
    question: str, bank: MemoryBank, k: int = ANSWER_K, retriever: Retriever | None = None, participants=None
) -> RankedRetrieval:
    """Split ``k`` evenly across participants when every memory is attributed, else plain top-k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    retriever = retriever or Retriever()
    speakers = list(participants) if participants is not None else speakers_in(bank)
    attributed = speakers and all(e.speaker is not None for e in bank)
    if attributed:
        return retriever.retrieve_per_participant(question, bank, max(1, k // len(speakers)), speakers)
    return retriever.retrieve(question, bank, k)


def answer_sample(
    question: str, retrieved: RankedRetrieval, answer_policy, tau: float = 0.0, rng=None, distill: bool = True
) -> PolicySample:
    if isinstance(_unwrap(answer_policy), AnswerPolicyParameters):
        return answer_policy_sample(question, retrieved, answer_policy, tau, rng, distill)
    return answer_policy.sample(question, retrieved)


def answer_question(
    question: str,
    bank: MemoryBank,
    answer_policy,
    k: int = ANSWER_K,
    tau: float = 0.0,
    rng=None,
    distill: bool = True,
    retriever: Retriever | None = None,
    participants=None,
) -> AnswerResult:
    retrieved = answer_retrieval(question, bank, k, retriever, participants)
    if not len(retrieved):
        return AnswerResult(UNKNOWN, (), 0.0)
    sample = answer_sample(question, retrieved, answer_policy, tau, rng, distill)
    return AnswerResult(sample.action.answer, sample.action.distilled_ids, sample.log_prob)


@dataclass(frozen=True)
class EpisodeResult:
    final_bank: MemoryBank
    answers: tuple[str, ...]
    rewards: tuple[int, ...]
    trace: tuple[TraceStep, ...]

    @property
    def mean_reward(self) -> float:
        return float(np.mean(self.rewards)) if self.rewards else 0.0


def run_episode(
    dialogue: Dialogue,
    op_policy,
    answer_policy,
    extractor=None,
    qa: Sequence[QAPair] | None = None,
    manager_tau: float = 0.0,
    answer_tau: float = 0.0,
    rng=None,
    retriever: Retriever | None = None,
    distill: bool = True,
) -> EpisodeResult:
    retriever = retriever or Retriever()
    bank, trace = construct_memory_bank(dialogue, op_policy, extractor, manager_tau, rng, retriever)
    qa = dialogue.qa if qa is None else qa
    answers, rewards = [], []
    for q in qa:
        result = answer_question(
            q.question, bank, answer_policy, tau=answer_tau, rng=rng, distill=distill,
            retriever=retriever, participants=dialogue.speakers,
        )
        answers.append(result.answer)
        rewards.append(em_reward(result.answer, q.gold_answer))
    return EpisodeResult(bank, tuple(answers), tuple(rewards), tuple(trace))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainingResult:
    policy: Any
    log: TrainingLog
    critic: CriticParameters | None = None
    halted: str | None = None
    evaluations: list = field(default_factory=list)


def manager_episodes(
    dialogues: Sequence[Dialogue],
    scripts: Sequence[SyntheticScript] | None = None,
    extractor=None,
    window: int | None = 50,
    retriever: Retriever | None = None,
) -> list[list[ManagerTuple]]:
    """One episode per dialogue: its manager tuples, restricted to turns that carry a QA.

    With oracle scripts the temporal banks are built from the ground-truth
    operations and each scripted turn is paired with its probe question.
    """
    extractor = extractor or RuleExtractor()
    episodes = []
    for i, dialogue in enumerate(dialogues):
        script = scripts[i] if scripts is not None else None
        tuples = build_manager_tuples(
            dialogue,
            extractor,
            window,
            bootstrap=oracle_bootstrap(script) if script else None,
            qa=script.probes if script else None,
            retriever=retriever,
        )
        episodes.append([t for t in tuples if t.qa])
    if not any(episodes):
        raise EmptyInput("no manager tuples carry a question")
    return episodes


def _check_trainer(trainer: str, config: TrainerConfig):
    if trainer not in TRAINERS:
        raise ValueError(f"trainer must be one of {TRAINERS}, got {trainer!r}")
    if trainer == "grpo":
        config.require_groups()


def _tuple_reward(bank, qa, answer_policy, retriever, speakers) -> float:
    rewards = [
        em_reward(answer_question(q.question, bank, answer_policy, retriever=retriever, participants=speakers).answer,
                  q.gold_answer)
        for q in qa
    ]
    return float(np.mean(rewards))


def manager_states(episodes, extractor=None, retriever: Retriever | None = None) -> list[np.ndarray]:
    """Feature vectors of every fact in the episodes against its temporal bank."""
    extractor = extractor or RuleExtractor()
    retriever = retriever or Retriever()
    states = []
    for episode in episodes:
        for tup in episode:
            for fact in extract_facts(tup.current_turn, extractor):
                states.append(op_features(fact, manager_retrieval(fact, tup.temporal_bank, retriever)))
    return states


def _manager_rollouts(episode, actor, answer_policy, extractor, retriever, config, rng):
    """G sampled decisions per (tuple, fact), each scored on the tuple's questions."""
    groups = []
    for tup in episode:
        facts = extract_facts(tup.current_turn, extractor)
        bank = tup.temporal_bank.copy()
        for fact in facts:
            retrieved = manager_retrieval(fact, bank, retriever)
            candidates = []
            for _ in range(config.group_size):
                sample = op_policy_sample(fact, retrieved, actor, config.temperature, rng)
                trial = bank.copy()
                trial.apply(sample.action)
                reward = _tuple_reward(trial, tup.qa, answer_policy, retriever, tup.speakers)
                candidates.append(Trajectory(sample, reward))
            groups.append(candidates)
            # later facts of the same turn see the greedy choice for this one
            bank.apply(op_policy_sample(fact, retrieved, actor, 0.0).action)
    return groups


def train_memory_manager(
    episodes: Sequence[Sequence[ManagerTuple]],
    op_policy,
    answer_policy,
    trainer: str = "grpo",
    config: TrainerConfig | None = None,
    extractor=None,
    retriever: Retriever | None = None,
    evaluate_fn: Callable | None = None,
    eval_every: int = 0,
    checkpoint_dir=None,
    scale_features: bool = True,
) -> TrainingResult:
    """Train the manager against a frozen answer policy; one update per episode.

    Each step takes the next episode (cycling), samples ``group_size``
    decisions per fact at the training temperature, rewards each with the
    mean EM of the frozen answer agent on the tuple's questions, and applies
    one GRPO or PPO update. ``evaluate_fn(policy)``, if given, is called
    every ``eval_every`` steps and its value logged as ``eval``. With
    ``scale_features`` an actor that still has the identity scaling is first
    standardised on the features of every training state.
    """
    config = config or TrainerConfig()
    _check_trainer(trainer, config)
    episodes = [list(e) for e in episodes if e]
    if not episodes:
        raise EmptyInput("no training episodes")
    extractor = extractor or RuleExtractor()
    retriever = retriever or Retriever()
    frozen = answer_policy
    frozen_state = _unwrap(answer_policy)
    rng = np.random.default_rng(config.seed)
    actor = _unwrap(op_policy)
    if scale_features and not actor.offset.any() and (actor.scale == 1).all():
        actor = actor.fit_scaling(manager_states(episodes, extractor, retriever))
    reference = freeze_reference(actor)
    critic = CriticParameters.zeros(len(actor.feature_spec)) if trainer == "ppo" else None
    result = TrainingResult(actor, TrainingLog(), critic)

    def record_eval(step):
        if evaluate_fn is not None and eval_every and step % eval_every == 0:
            value = float(evaluate_fn(actor))
            result.evaluations.append((step, value))
            return {"eval": value}
        return {}

    for step in range(config.max_steps):
        extra = record_eval(step)
        groups = _manager_rollouts(episodes[step % len(episodes)], actor, frozen, extractor, retriever, config, rng)
        if not groups:
            continue
        try:
            if trainer == "grpo":
                actor, diag = grpo_update_step([GroupSample(tuple(g)) for g in groups], actor, reference, config)
            else:
                batch = [t for g in groups for t in g]
                actor, critic, diag = ppo_update_step(batch, actor, critic, config)
        except NonFiniteGradient as exc:
            logger.error("halting at step %d: %s", step, exc)
            result.halted = str(exc)
            break
        result.log.append(step, diag, trainer=trainer, **extra)
        result.policy, result.critic = actor, critic
        _maybe_checkpoint(checkpoint_dir, step, actor, config, "manager")
    else:
        record_eval(config.max_steps)
    if _unwrap(frozen) is not frozen_state:
        raise RuntimeError("answer policy changed during manager training")
    return result


def _maybe_checkpoint(directory, step, params, config, name):
    if directory is not None and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
        save_checkpoint(Path(directory), step + 1, params, config, name)


def train_answer_agent(
    tuples: Sequence,
    answer_policy,
    trainer: str = "grpo",
    config: TrainerConfig | None = None,
    evaluate_fn: Callable | None = None,
    eval_every: int = 0,
    checkpoint_dir=None,
) -> TrainingResult:
    """Train the answer agent on ``AnswerTuple``s; each step uses ``batch_size`` tuples.

    GRPO groups the ``group_size`` candidates of one tuple; PPO treats them
    as independent samples scored against a linear critic.
    """
    config = config or TrainerConfig()
    _check_trainer(trainer, config)
    tuples = [t for t in tuples if len(t.retrieved)]
    if not tuples:
        raise EmptyInput("no answer tuples with retrieved memories")
    rng = np.random.default_rng(config.seed)
    actor = _unwrap(answer_policy)
    reference = freeze_reference(actor)
    critic = CriticParameters.zeros(len(actor.theta)) if trainer == "ppo" else None
    result = TrainingResult(actor, TrainingLog(), critic)
    order = rng.permutation(len(tuples))
    cursor = 0
    for step in range(config.max_steps):
        extra = {}
        if evaluate_fn is not None and eval_every and step % eval_every == 0:
            extra["eval"] = float(evaluate_fn(actor))
            result.evaluations.append((step, extra["eval"]))
        groups = []
        for _ in range(min(config.batch_size, len(tuples))):
            if cursor == len(order):
                order, cursor = rng.permutation(len(tuples)), 0
            tup = tuples[order[cursor]]
            cursor += 1
            candidates = []
            for _ in range(config.group_size):
                sample = answer_policy_sample(tup.question, tup.retrieved, actor, config.temperature, rng)
                candidates.append(Trajectory(sample, em_reward(sample.action.answer, tup.gold_answer)))
            groups.append(candidates)
        try:
            if trainer == "grpo":
                actor, diag = grpo_update_step([GroupSample(tuple(g)) for g in groups], actor, reference, config)
            else:
                actor, critic, diag = ppo_update_step([t for g in groups for t in g], actor, critic, config)
        except NonFiniteGradient as exc:
            logger.error("halting at step %d: %s", step, exc)
            result.halted = str(exc)
            break
        result.log.append(step, diag, trainer=trainer, **extra)
        result.policy, result.critic = actor, critic
        _maybe_checkpoint(checkpoint_dir, step, actor, config, "answer")
    return result


def answer_tuples_for(
    dialogues: Sequence[Dialogue], op_policy, extractor=None, retriever: Retriever | None = None, k_per_participant=30
):
    """Answer tuples over banks built greedily by ``op_policy``."""
    retriever = retriever or Retriever()
    out = []
    for dialogue in dialogues:
        bank, _ = construct_memory_bank(dialogue, op_policy, extractor, 0.0, None, retriever)
        out.extend(build_answer_tuples(dialogue, bank, k_per_participant, retriever))
    return out


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Prediction:
    dialogue_id: str
    question: str
    gold_answer: str
    category: str
    prediction: str
    distilled_ids: tuple[str, ...]

    def to_record(self) -> dict:
        return {
            "dialogue_id": self.dialogue_id,
            "question": self.question,
            "answer": self.gold_answer,
            "category": self.category,
            "prediction": self.prediction,
            "distilled_ids": list(self.distilled_ids),
        }


def predict(
    dialogues: Sequence[Dialogue],
    op_policy,
    answer_policy,
    extractor=None,
    retriever: Retriever | None = None,
    distill: bool = True,
    k: int = ANSWER_K,
) -> list[Prediction]:
    """Greedy bank construction and answering for every question of every dialogue."""
    retriever = retriever or Retriever()
    rows = []
    for dialogue in dialogues:
        bank, _ = construct_memory_bank(dialogue, op_policy, extractor, 0.0, None, retriever)
        for q in dialogue.qa:
            result = answer_question(
                q.question, bank, answer_policy, k, 0.0, None, distill, retriever, dialogue.speakers
            )
            rows.append(
                Prediction(dialogue.dialogue_id, q.question, q.gold_answer, q.category, result.answer,
                           result.distilled_ids)
            )
    return rows


def score_predictions(predictions: Sequence[Prediction], gateway=None, workers: int = 4, seed=None):
    if not predictions:
        raise EmptyInput("no predictions to score")
    labels = [None] * len(predictions)
    if gateway is not None:
        try:
            labels = judge_many([(p.question, p.gold_answer, p.prediction) for p in predictions], gateway, workers)
        except JudgeUnavailable as exc:
            logger.warning("judge unavailable, reporting F1/BLEU-1 only: %s", exc)
            labels = [JudgeLabel.UNAVAILABLE] * len(predictions)
    scores = [score_answer(p.prediction, p.gold_answer, label) for p, label in zip(predictions, labels)]
    return aggregate_report(scores, [p.category for p in predictions], seed)


def evaluate(
    dialogues: Sequence[Dialogue],
    op_policy,
    answer_policy,
    runs: int = 3,
    extractor=None,
    gateway=None,
    distill: bool = True,
    workers: int = 4,
    seeds: Sequence[int] | None = None,
):
    """Mean report over ``runs`` greedy evaluations of the full pipeline."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    seeds = list(seeds) if seeds is not None else list(range(runs))
    reports = []
    for run in range(runs):
        rows = predict(dialogues, op_policy, answer_policy, extractor, Retriever(), distill)
        reports.append(score_predictions(rows, gateway, workers, seeds[run]))
    return average_reports(reports)


def greedy_em(dialogues: Sequence[Dialogue], op_policy, answer_policy, extractor=None, distill: bool = True) -> float:
    rows = predict(dialogues, op_policy, answer_policy, extractor, distill=distill)
    return float(np.mean([em_reward(r.prediction, r.gold_answer) for r in rows])) if rows else 0.0

