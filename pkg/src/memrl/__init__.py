"""Memory manager and answer agent for long-horizon conversational QA, trained with PPO or GRPO."""

__version__ = "0.1.0"

from .dataset import (
    AnswerTuple,
    Dialogue,
    DialogueTurn,
    ManagerTuple,
    QAPair,
    build_answer_tuples,
    build_manager_tuples,
    load_locomo,
    split_dataset,
)
from .estimators import AnswerAgentEstimator, MemoryManagerEstimator
from .extraction import ExtractedFact, LLMExtractor, RuleExtractor, extract_facts
from .memory import MemoryBank, MemoryEntry, MemoryOperationDecision, OpKind, apply_operation
from .metrics import RewardReport, bleu1, exact_match, llm_judge, token_f1
from .pipeline import (
    EpisodeResult,
    OracleOperationPolicy,
    answer_question,
    construct_memory_bank,
    evaluate,
    train_answer_agent,
    train_memory_manager,
)
from .policy import (
    AnswerPolicyParameters,
    OperationPolicyParameters,
    answer_policy_sample,
    hand_set_answer_policy,
    op_policy_sample,
    policy_log_prob,
)
from .retrieval import Retriever, retrieve_top_k
from .rl import TrainerConfig, clipped_surrogate, group_advantages, grpo_objective, ppo_surrogate
from .synthetic import SyntheticScript, generate_synthetic

__all__ = [
    "AnswerAgentEstimator",
    "AnswerPolicyParameters",
    "AnswerTuple",
    "Dialogue",
    "DialogueTurn",
    "EpisodeResult",
    "ExtractedFact",
    "LLMExtractor",
    "ManagerTuple",
    "MemoryBank",
    "MemoryEntry",
    "MemoryManagerEstimator",
    "MemoryOperationDecision",
    "OpKind",
    "OperationPolicyParameters",
    "OracleOperationPolicy",
    "QAPair",
    "RewardReport",
    "Retriever",
    "RuleExtractor",
    "SyntheticScript",
    "TrainerConfig",
    "answer_policy_sample",
    "answer_question",
    "apply_operation",
    "bleu1",
    "build_answer_tuples",
    "build_manager_tuples",
    "clipped_surrogate",
    "construct_memory_bank",
    "evaluate",
    "exact_match",
    "extract_facts",
    "generate_synthetic",
    "group_advantages",
    "grpo_objective",
    "hand_set_answer_policy",
    "llm_judge",
    "load_locomo",
    "op_policy_sample",
    "policy_log_prob",
    "ppo_surrogate",
    "retrieve_top_k",
    "split_dataset",
    "token_f1",
    "train_answer_agent",
    "train_memory_manager",
]
