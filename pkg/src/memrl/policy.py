"""Manager and answer policies.

The desk-scale policies are linear in hand-built features: a softmax over the
four operations for the manager, and independent Bernoulli inclusion per
retrieved memory for the answer agent. Both expose exact log-probabilities,
their gradients and exact KL divergences, which the RL trainers consume.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from . import answer_rules
from .exceptions import ImpossibleAction, ParseError
from .memory import OP_KINDS, MemoryBank, MemoryOperationDecision, OpKind, parse_decisions
from .retrieval import RankedRetrieval, tokenize

logger = logging.getLogger(__name__)

OP_FEATURES = ("max_sim", "mean_sim", "overlap", "negation", "bank_empty", "bias")
ANSWER_FEATURES = ("similarity", "keyword_overlap", "recency", "bias")

NEGATION_MARKERS = frozenset(
    "no not never nor anymore longer dislike dislikes disliked stopped quit doesn don didn isn wasn aren weren won".split()
)

PARAMS_FORMAT = "memrl-params"
PARAMS_VERSION = 1


# ---------------------------------------------------------------------------
# numerics
# ---------------------------------------------------------------------------


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max())
    return e / e.sum()


def log_softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    shifted = z - z.max()
    return shifted - math.log(np.exp(shifted).sum())


def log_sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return -np.logaddexp(0.0, -x)


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.exp(log_sigmoid(x))


def categorical_kl(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    mask = p > 0
    if np.any(q[mask] <= 0):
        return math.inf
    return float(max(0.0, np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask])))))


def _readonly(array) -> np.ndarray:
    out = np.array(array, dtype=float, copy=True)
    out.setflags(write=False)
    return out


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not tau >= 0 or not math.isfinite(tau):
        raise ValueError(f"temperature must be finite and >= 0, got {tau}")
    return tau


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------


def _text(fact) -> str:
    return getattr(fact, "text", fact)


def op_features(fact, retrieved: RankedRetrieval) -> np.ndarray:
    """Feature vector for one (fact, retrieval) state, ordered as ``OP_FEATURES``.

    Overlap is the share of the fact's content words (stopwords removed) that
    also occur in the best-matching retrieved entry.
    """
    text = _text(fact)
    fact_tokens = tokenize(text)
    scores = retrieved.scores()
    best = retrieved.best()
    overlap = 0.0
    content = set(answer_rules.keywords(text))
    if best is not None and content:
        overlap = len(content & set(tokenize(best.text))) / len(content)
    return np.array(
        [
            max(scores) if scores else 0.0,
            float(np.mean(scores)) if scores else 0.0,
            overlap,
            1.0 if NEGATION_MARKERS.intersection(fact_tokens) else 0.0,
            0.0 if scores else 1.0,
            1.0,
        ]
    )


def answer_features(question: str, retrieved: RankedRetrieval) -> np.ndarray:
    """Per-memory feature matrix (one row per retrieved item), ordered as ``ANSWER_FEATURES``.

    Recency is the rank of the memory's last update among the retrieved set,
    scaled to [0, 1] with the most recent at 1.
    """
    n = len(retrieved)
    phi = np.zeros((n, len(ANSWER_FEATURES)))
    if n == 0:
        return phi
    asked = answer_rules.keywords(question)
    order = sorted(range(n), key=lambda i: (retrieved[i].entry.updated_at, retrieved[i].index))
    recency = np.empty(n)
    for rank, i in enumerate(order):
        recency[i] = rank / (n - 1) if n > 1 else 1.0
    for i, item in enumerate(retrieved):
        overlap = 0.0
        if asked:
            overlap = len(set(asked) & set(tokenize(item.text))) / len(asked)
        phi[i] = (item.score, overlap, recency[i], 1.0)
    return phi


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OperationPolicyParameters:
    """Weights mapping ``OP_FEATURES`` to logits over ``OP_KINDS`` (rows).

    Features are standardised as ``(f - offset) / scale`` before the linear
    map; the defaults (0 and 1) leave them unchanged. See :meth:`fit_scaling`.
    """

    weights: np.ndarray
    feature_spec: tuple[str, ...] = OP_FEATURES
    version: int = 0
    offset: np.ndarray | None = None
    scale: np.ndarray | None = None

    def __post_init__(self):
        weights = _readonly(self.weights)
        n = len(self.feature_spec)
        if weights.shape != (len(OP_KINDS), n):
            raise ValueError(f"weights must have shape (4, {n}), got {weights.shape}")
        offset = _readonly(np.zeros(n) if self.offset is None else self.offset)
        scale = _readonly(np.ones(n) if self.scale is None else self.scale)
        if offset.shape != (n,) or scale.shape != (n,):
            raise ValueError(f"offset and scale must have length {n}")
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(offset)) and np.all(np.isfinite(scale))):
            raise ValueError("weights, offset and scale must be finite")
        if np.any(scale <= 0):
            raise ValueError("scale must be positive")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "feature_spec", tuple(self.feature_spec))
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "scale", scale)

    @classmethod
    def zeros(cls) -> "OperationPolicyParameters":
        return cls(np.zeros((len(OP_KINDS), len(OP_FEATURES))))

    def __eq__(self, other):
        if not isinstance(other, OperationPolicyParameters):
            return NotImplemented
        return (
            self.feature_spec == other.feature_spec
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.offset, other.offset)
            and np.array_equal(self.scale, other.scale)
        )

    def __hash__(self):
        return hash((self.feature_spec, self.weights.tobytes(), self.offset.tobytes(), self.scale.tobytes()))

    @property
    def theta(self) -> np.ndarray:
        return self.weights.ravel().copy()

    def with_theta(self, theta) -> "OperationPolicyParameters":
        return OperationPolicyParameters(
            np.asarray(theta, dtype=float).reshape(self.weights.shape),
            self.feature_spec,
            self.version + 1,
            self.offset,
            self.scale,
        )

    def fit_scaling(self, states) -> "OperationPolicyParameters":
        """Standardise each feature by its mean and std over ``states``.

        Constant features (the bias among them) are left untouched. Call this
        before training so the update sees well-conditioned inputs.
        """
        x = np.asarray(list(states), dtype=float)
        if x.ndim != 2 or x.shape[1] != len(self.feature_spec):
            raise ValueError("states must be a non-empty (n, features) array")
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        varying = std > 1e-8
        offset = np.where(varying, mean, 0.0)
        scale = np.where(varying, std, 1.0)
        return OperationPolicyParameters(self.weights, self.feature_spec, self.version, offset, scale)

    def standardize(self, state) -> np.ndarray:
        return (np.asarray(state, dtype=float) - self.offset) / self.scale

    # state = feature vector f, choice = operation index
    def logits(self, state) -> np.ndarray:
        return self.weights @ self.standardize(state)

    def distribution(self, state, tau: float = 1.0) -> np.ndarray:
        tau = _check_tau(tau)
        z = self.logits(state)
        if tau == 0:
            out = np.zeros(len(z))
            out[int(np.argmax(z))] = 1.0
            return out
        return softmax(z / tau)

    def log_prob(self, state, choice: int, tau: float = 1.0) -> float:
        tau = _check_tau(tau)
        if tau == 0:
            return 0.0 if int(np.argmax(self.logits(state))) == choice else -math.inf
        return float(log_softmax(self.logits(state) / tau)[choice])

    def grad_log_prob(self, state, choice: int, tau: float = 1.0) -> np.ndarray:
        p = self.distribution(state, tau)
        onehot = np.zeros_like(p)
        onehot[choice] = 1.0
        return np.outer(onehot - p, self.standardize(state)).ravel() / tau

    def kl(self, reference: "OperationPolicyParameters", state, tau: float = 1.0) -> float:
        tau = _check_tau(tau)
        if tau == 0:
            return categorical_kl(self.distribution(state, 0), reference.distribution(state, 0))
        lp = log_softmax(self.logits(state) / tau)
        lq = log_softmax(reference.logits(state) / tau)
        return float(max(0.0, np.dot(np.exp(lp), lp - lq)))

    def grad_kl(self, reference: "OperationPolicyParameters", state, tau: float = 1.0) -> np.ndarray:
        lp = log_softmax(self.logits(state) / tau)
        lq = log_softmax(reference.logits(state) / tau)
        p = np.exp(lp)
        kl = float(np.dot(p, lp - lq))
        return np.outer(p * (lp - lq - kl), self.standardize(state)).ravel() / tau


@dataclass(frozen=True, eq=False)
class AnswerPolicyParameters:
    """Weights scoring each retrieved memory for inclusion (``ANSWER_FEATURES``)."""

    selection_weights: np.ndarray
    answer_rule: str = "auto"
    version: int = 0

    def __post_init__(self):
        weights = _readonly(self.selection_weights)
        if weights.shape != (len(ANSWER_FEATURES),):
            raise ValueError(f"selection_weights must have length {len(ANSWER_FEATURES)}, got {weights.shape}")
        if not np.all(np.isfinite(weights)):
            raise ValueError("selection_weights must be finite")
        if self.answer_rule not in answer_rules.RULES:
            raise ValueError(f"unknown answer rule {self.answer_rule!r}")
        object.__setattr__(self, "selection_weights", weights)

    @classmethod
    def zeros(cls) -> "AnswerPolicyParameters":
        return cls(np.zeros(len(ANSWER_FEATURES)))

    def __eq__(self, other):
        if not isinstance(other, AnswerPolicyParameters):
            return NotImplemented
        return self.answer_rule == other.answer_rule and np.array_equal(self.selection_weights, other.selection_weights)

    def __hash__(self):
        return hash((self.answer_rule, self.selection_weights.tobytes()))

    @property
    def theta(self) -> np.ndarray:
        return self.selection_weights.copy()

    def with_theta(self, theta) -> "AnswerPolicyParameters":
        return AnswerPolicyParameters(np.asarray(theta, dtype=float), self.answer_rule, self.version + 1)

    # state = feature matrix (n x 4), choice = inclusion mask of length n
    def scores(self, state) -> np.ndarray:
        phi = np.asarray(state, dtype=float).reshape(-1, len(ANSWER_FEATURES))
        return phi @ self.selection_weights

    def inclusion_probs(self, state, tau: float = 1.0) -> np.ndarray:
        tau = _check_tau(tau)
        s = self.scores(state)
        if tau == 0:
            return (s > 0).astype(float)
        return sigmoid(s / tau)

    def log_prob(self, state, choice, tau: float = 1.0) -> float:
        tau = _check_tau(tau)
        z = np.asarray(choice, dtype=bool)
        s = self.scores(state)
        if tau == 0:
            return 0.0 if np.array_equal(z, s > 0) else -math.inf
        x = s / tau
        return float(np.sum(np.where(z, log_sigmoid(x), log_sigmoid(-x))))

    def grad_log_prob(self, state, choice, tau: float = 1.0) -> np.ndarray:
        phi = np.asarray(state, dtype=float).reshape(-1, len(ANSWER_FEATURES))
        z = np.asarray(choice, dtype=float)
        p = self.inclusion_probs(phi, tau)
        return (z - p) @ phi / tau

    def kl(self, reference: "AnswerPolicyParameters", state, tau: float = 1.0) -> float:
        x = self.scores(state) / tau
        y = reference.scores(state) / tau
        p = sigmoid(x)
        # Bernoulli KL written with log-sigmoids to stay finite at saturation
        terms = p * (log_sigmoid(x) - log_sigmoid(y)) + (1 - p) * (log_sigmoid(-x) - log_sigmoid(-y))
        return float(max(0.0, terms.sum()))

    def grad_kl(self, reference: "AnswerPolicyParameters", state, tau: float = 1.0) -> np.ndarray:
        phi = np.asarray(state, dtype=float).reshape(-1, len(ANSWER_FEATURES))
        x = self.scores(phi) / tau
        y = reference.scores(phi) / tau
        p = sigmoid(x)
        return ((x - y) * p * (1 - p) / tau) @ phi


PolicyParameters = OperationPolicyParameters | AnswerPolicyParameters

# similarity + 10 * keyword overlap - 9: keeps a memory only if it covers nearly every question keyword
HAND_SET_ANSWER_WEIGHTS = (1.0, 10.0, 0.0, -9.0)


def hand_set_answer_policy(answer_rule: str = "auto") -> AnswerPolicyParameters:
    """Fixed answer policy used as the frozen partner while training the manager."""
    return AnswerPolicyParameters(np.array(HAND_SET_ANSWER_WEIGHTS), answer_rule)


@dataclass(frozen=True)
class ReferencePolicy:
    """Frozen snapshot of a policy taken at the start of training."""

    params: Any

    def __getattr__(self, name):
        # delegate distribution queries to the frozen parameters
        try:
            params = self.__dict__["params"]
        except KeyError:
            raise AttributeError(name) from None
        return getattr(params, name)


def freeze_reference(params) -> ReferencePolicy:
    if isinstance(params, ReferencePolicy):
        params = params.params
    if isinstance(params, OperationPolicyParameters):
        frozen = OperationPolicyParameters(
            params.weights.copy(), params.feature_spec, params.version, params.offset.copy(), params.scale.copy()
        )
    else:
        frozen = AnswerPolicyParameters(params.selection_weights.copy(), params.answer_rule, params.version)
    return ReferencePolicy(frozen)


def _unwrap(params):
    return params.params if isinstance(params, ReferencePolicy) else params


# ---------------------------------------------------------------------------
# samples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AnswerAction:
    distilled_ids: tuple[str, ...]
    answer: str


@dataclass(frozen=True, eq=False)
class PolicySample:
    """A sampled action together with what is needed to rescore it.

    ``state`` and ``choice`` are the feature input and the raw sampled choice
    (an operation index, or an inclusion mask). ``log_prob`` is ``None`` for
    LLM-backed policies, which cannot score their own outputs exactly.
    """

    action: Any
    log_prob: float | None
    temperature: float
    state: np.ndarray | None = None
    choice: Any = None
    info: dict = field(default_factory=dict)


def _draw_categorical(p: np.ndarray, rng) -> int:
    u = rng.random()
    return min(int(np.searchsorted(np.cumsum(p), u, side="right")), len(p) - 1)


def _require_rng(rng, tau):
    if tau > 0 and rng is None:
        raise ValueError("sampling at temperature > 0 needs an explicit random generator")


def op_policy_distribution(fact, retrieved: RankedRetrieval, params, tau: float = 1.0) -> np.ndarray:
    return _unwrap(params).distribution(op_features(fact, retrieved), tau)


def compose_decision(kind: OpKind, fact, retrieved: RankedRetrieval) -> MemoryOperationDecision:
    """Turn an operation choice into a concrete decision.

    ADD stores the fact verbatim; UPDATE appends the fact to the best match;
    both targeted kinds act on the highest-similarity retrieved entry.
    """
    text = _text(fact)
    provenance = {
        "speaker": getattr(fact, "speaker", None),
        "timestamp": getattr(fact, "timestamp", None),
        "source_turn": getattr(fact, "source_turn_id", None),
    }
    best = retrieved.best()
    if kind in (OpKind.UPDATE, OpKind.DELETE) and best is None:
        logger.info("%s sampled with an empty retrieval; demoting to ADD", kind.value)
        kind = OpKind.ADD
    if kind is OpKind.ADD:
        return MemoryOperationDecision.add(text, **provenance)
    if kind is OpKind.UPDATE:
        provenance.pop("speaker")
        return MemoryOperationDecision.update(best.id, f"{best.text}; {text}", old_text=best.text, **provenance)
    if kind is OpKind.DELETE:
        return MemoryOperationDecision.delete(best.id, old_text=best.text)
    return MemoryOperationDecision.noop()


def op_policy_sample(fact, retrieved: RankedRetrieval, params, tau: float = 1.0, rng=None) -> PolicySample:
    tau = _check_tau(tau)
    _require_rng(rng, tau)
    params = _unwrap(params)
    f = op_features(fact, retrieved)
    if tau == 0:
        choice = int(np.argmax(params.logits(f)))
    else:
        choice = _draw_categorical(params.distribution(f, tau), rng)
    decision = compose_decision(OP_KINDS[choice], fact, retrieved)
    return PolicySample(
        action=decision,
        log_prob=params.log_prob(f, choice, tau),
        temperature=tau,
        state=f,
        choice=choice,
        info={"kind_sampled": OP_KINDS[choice].value},
    )


def _answer_from(question, retrieved: RankedRetrieval, included: np.ndarray, ranking: np.ndarray, rule: str):
    ids = tuple(item.id for item, keep in zip(retrieved, included) if keep)
    if not ids:
        return AnswerAction((), answer_rules.UNKNOWN)
    candidates = [i for i in range(len(retrieved)) if included[i]]
    top = min(candidates, key=lambda i: (-ranking[i], -retrieved[i].score, retrieved[i].index))
    return AnswerAction(ids, answer_rules.extract_answer(question, retrieved[top].text, rule))


def answer_policy_sample(
    question: str, retrieved: RankedRetrieval, params, tau: float = 1.0, rng=None, distill: bool = True
) -> PolicySample:
    """Distil the retrieved memories, then extract an answer from the best kept one.

    With ``distill=False`` every memory is kept and the answer comes from the
    memory with the highest retrieval similarity (the full-context ablation).
    """
    tau = _check_tau(tau)
    _require_rng(rng, tau)
    params = _unwrap(params)
    phi = answer_features(question, retrieved)
    n = len(retrieved)
    if not distill:
        included = np.ones(n, dtype=bool)
        action = _answer_from(question, retrieved, included, np.zeros(n), params.answer_rule)
        return PolicySample(action, 0.0, tau, phi, tuple(included.tolist()), {"distill": False})
    scores = params.scores(phi)
    if tau == 0:
        included = scores > 0
    else:
        included = rng.random(n) < params.inclusion_probs(phi, tau)
    choice = tuple(bool(x) for x in included)
    action = _answer_from(question, retrieved, included, scores, params.answer_rule)
    return PolicySample(action, params.log_prob(phi, choice, tau), tau, phi, choice)


def policy_log_prob(action, context, retrieved: RankedRetrieval, params, tau: float = 1.0) -> float:
    """Exact log-probability of ``action`` given the context.

    ``action`` is an operation kind or decision (manager) or an
    :class:`AnswerAction` / iterable of kept ids (answer agent).
    """
    params = _unwrap(params)
    if isinstance(params, OperationPolicyParameters):
        kind = action.kind if isinstance(action, MemoryOperationDecision) else OpKind(action)
        if kind in (OpKind.UPDATE, OpKind.DELETE):
            best = retrieved.best()
            if best is None or (isinstance(action, MemoryOperationDecision) and action.target_id != best.id):
                raise ImpossibleAction(f"{kind.value} target is not the best retrieved entry")
        value = params.log_prob(op_features(context, retrieved), kind.index, tau)
    else:
        kept = set(action.distilled_ids if isinstance(action, AnswerAction) else action)
        unknown = kept - set(retrieved.ids())
        if unknown:
            raise ImpossibleAction(f"kept ids {sorted(unknown)} were not retrieved")
        mask = [item.id in kept for item in retrieved]
        value = params.log_prob(answer_features(context, retrieved), mask, tau)
    if value == -math.inf:
        raise ImpossibleAction("action has probability 0 under the policy")
    return value


# ---------------------------------------------------------------------------
# parameter files
# ---------------------------------------------------------------------------


def dumps_params(params) -> str:
    params = _unwrap(params)
    lines = [f"# {PARAMS_FORMAT} v{PARAMS_VERSION}"]
    if isinstance(params, OperationPolicyParameters):
        lines += ["kind operation", f"version {params.version}", "features " + ",".join(params.feature_spec)]
        lines.append("offset " + ",".join(repr(float(x)) for x in params.offset))
        lines.append("scale " + ",".join(repr(float(x)) for x in params.scale))
        lines.append("weights %d %d" % params.weights.shape)
        lines += [" ".join(repr(float(x)) for x in row) for row in params.weights]
    else:
        lines += ["kind answer", f"version {params.version}", f"answer_rule {params.answer_rule}"]
        lines.append(f"selection_weights {params.selection_weights.shape[0]}")
        lines.append(" ".join(repr(float(x)) for x in params.selection_weights))
    return "\n".join(lines) + "\n"


def loads_params(text: str):
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or lines[0] != f"# {PARAMS_FORMAT} v{PARAMS_VERSION}":
        raise ParseError("not a parameter file", 0)
    header = {}
    i = 1
    while i < len(lines) and not lines[i].startswith(("weights", "selection_weights")):
        key, _, value = lines[i].partition(" ")
        header[key] = value
        i += 1
    if i == len(lines):
        raise ParseError("missing weight block", len("\n".join(lines[:i]).encode()))
    name, *shape = lines[i].split()
    shape = tuple(int(s) for s in shape)
    rows = [[float(x) for x in line.split()] for line in lines[i + 1 :]]
    values = np.array(rows, dtype=float).reshape(shape)
    version = int(header.get("version", 0))
    if header.get("kind") == "operation":
        features = tuple(header["features"].split(","))
        offset = [float(x) for x in header["offset"].split(",")] if "offset" in header else None
        scale = [float(x) for x in header["scale"].split(",")] if "scale" in header else None
        return OperationPolicyParameters(values, features, version, offset, scale)
    if header.get("kind") == "answer":
        return AnswerPolicyParameters(values, header.get("answer_rule", "auto"), version)
    raise ParseError(f"unknown parameter kind {header.get('kind')!r}", 0)


def save_params(params, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_params(params))


def load_params(path):
    with open(path, encoding="utf-8") as fh:
        return loads_params(fh.read())


# ---------------------------------------------------------------------------
# LLM-backed policies
# ---------------------------------------------------------------------------


class LLMOperationPolicy:
    """Manager backed by a chat model through the gateway.

    Returns every decision the model lists, in order; ``log_prob`` is ``None``.
    """

    def __init__(self, gateway, temperature: float = 0.0, max_tokens: int = 2048):
        self.gateway = gateway
        self.temperature = temperature
        self.max_tokens = max_tokens

    def decide(self, facts: Sequence, retrieved: RankedRetrieval, bank: MemoryBank) -> list[MemoryOperationDecision]:
        from .gateway import GatewayRequest
        from .prompts import render_manager_prompt

        old = [{"id": item.id, "text": item.text} for item in retrieved]
        prompt = render_manager_prompt(old, [_text(f) for f in facts])
        response = self.gateway.chat_complete(
            GatewayRequest.user(prompt, temperature=self.temperature, max_tokens=self.max_tokens)
        )
        return parse_decisions(_json_block(response.text), bank)

    def sample(self, fact, retrieved: RankedRetrieval, bank: MemoryBank) -> PolicySample:
        decisions = self.decide([fact], retrieved, bank)
        return PolicySample(decisions, None, self.temperature)


class LLMAnswerPolicy:
    """Answer agent backed by a chat model; kept memories are not observable."""

    def __init__(self, gateway, temperature: float = 0.0, max_tokens: int = 2048):
        self.gateway = gateway
        self.temperature = temperature
        self.max_tokens = max_tokens

    def sample(self, question: str, retrieved: RankedRetrieval) -> PolicySample:
        from .gateway import GatewayRequest
        from .prompts import render_answer_prompt

        sections = []
        start = 0
        for speaker, count in retrieved.sections:
            chunk = retrieved.items[start : start + count]
            start += count
            sections.append((speaker or "unknown", [(it.entry.timestamp, it.text) for it in chunk]))
        prompt = render_answer_prompt(question, sections)
        response = self.gateway.chat_complete(
            GatewayRequest.user(prompt, temperature=self.temperature, max_tokens=self.max_tokens)
        )
        return PolicySample(AnswerAction((), parse_answer(response.text)), None, self.temperature)


def parse_answer(text: str) -> str:
    """The text after the last ``**Answer:**`` marker (or the whole reply)."""
    marker = "**Answer:**"
    if marker in text:
        text = text.rsplit(marker, 1)[1]
    return text.strip().splitlines()[0].strip() if text.strip() else answer_rules.UNKNOWN


def _json_block(text: str) -> str:
    """Strip chatter around the first top-level JSON object in a model reply."""
    start = text.find("{")
    end = text.rfind("}")
    if start == -1 or end < start:
        return text
    return text[start : end + 1]
