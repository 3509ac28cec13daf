"""Answer normalisation, EM / token F1 / BLEU-1, the LLM judge and report aggregation."""

from __future__ import annotations

import json
import logging
import math
import re
import string
import unicodedata
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .exceptions import EmptyInput, GatewayError, JudgeMalformed, JudgeUnavailable

logger = logging.getLogger(__name__)

CATEGORIES = ("single-hop", "multi-hop", "open-domain", "temporal")
METRIC_KEYS = ("f1", "bleu1", "em", "judge")

_PUNCT = set(string.punctuation)
_ARTICLES_RE = re.compile(r"\b(a|an|the)\b")


def _strip_punct(text: str) -> str:
    return "".join(ch for ch in text if ch not in _PUNCT and not unicodedata.category(ch).startswith("P"))


def normalize_answer(text: str) -> str:
    """Lowercase, drop punctuation and the articles a/an/the, collapse whitespace."""
    text = _strip_punct(text.lower())
    return " ".join(_ARTICLES_RE.sub(" ", text).split())


def exact_match(pred: str, gold: str) -> bool:
    return normalize_answer(pred) == normalize_answer(gold)


def token_f1(pred: str, gold: str) -> float:
    pred_tokens = normalize_answer(pred).split()
    gold_tokens = normalize_answer(gold).split()
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    matches = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if matches == 0:
        return 0.0
    precision = matches / len(pred_tokens)
    recall = matches / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def bleu_tokens(text: str) -> list[str]:
    """BLEU-1 tokens: lowercased, punctuation stripped, articles kept."""
    return _strip_punct(text.lower()).split()


def bleu1(pred: str, gold: str) -> float:
    pred_tokens = bleu_tokens(pred)
    gold_tokens = bleu_tokens(gold)
    if not pred_tokens:
        return 0.0
    gold_counts = Counter(gold_tokens)
    clipped = sum(min(n, gold_counts[tok]) for tok, n in Counter(pred_tokens).items())
    precision = clipped / len(pred_tokens)
    bp = min(1.0, math.exp(1 - len(gold_tokens) / len(pred_tokens)))
    return precision * bp


# ---------------------------------------------------------------------------
# judge
# ---------------------------------------------------------------------------


class JudgeLabel(str, Enum):
    CORRECT = "CORRECT"
    WRONG = "WRONG"
    UNAVAILABLE = "UNAVAILABLE"


_LABEL_RE = re.compile(r'"label"\s*:\s*"([A-Za-z]+)"', re.IGNORECASE)


def parse_judge_label(text: str) -> JudgeLabel:
    match = _LABEL_RE.search(text)
    if match is None:
        try:
            obj = json.loads(text)
        except (json.JSONDecodeError, TypeError):
            obj = None
        value = obj.get("label") if isinstance(obj, dict) else None
    else:
        value = match.group(1)
    if isinstance(value, str) and value.upper() in ("CORRECT", "WRONG"):
        return JudgeLabel(value.upper())
    raise JudgeMalformed(f"no CORRECT/WRONG label in judge reply: {text[:80]!r}")


def llm_judge(question: str, gold: str, pred: str, gateway, max_tokens: int = 2048) -> JudgeLabel:
    from .gateway import GatewayRequest
    from .prompts import render_judge_prompt

    request = GatewayRequest.user(render_judge_prompt(question, gold, pred), temperature=0.0, max_tokens=max_tokens)
    try:
        response = gateway.chat_complete(request)
    except GatewayError as exc:
        raise JudgeUnavailable(str(exc)) from exc
    return parse_judge_label(response.text)


def judge_many(items: Sequence[tuple[str, str, str]], gateway, workers: int = 4) -> list[JudgeLabel]:
    """Judge ``(question, gold, pred)`` triples with bounded concurrency.

    Unreachable judges are recorded as UNAVAILABLE; results keep input order.
    """

    def one(item):
        try:
            return llm_judge(*item, gateway=gateway)
        except JudgeUnavailable as exc:
            logger.warning("judge unavailable: %s", exc)
            return JudgeLabel.UNAVAILABLE

    if workers <= 1:
        return [one(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, items))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScoreTriple:
    f1: float
    bleu1: float
    judge: JudgeLabel | None = None
    em: float = 0.0

    def __post_init__(self):
        for name in ("f1", "bleu1", "em"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")


def score_answer(pred: str, gold: str, judge: JudgeLabel | None = None) -> ScoreTriple:
    return ScoreTriple(token_f1(pred, gold), bleu1(pred, gold), judge, float(exact_match(pred, gold)))


@dataclass(frozen=True)
class RewardReport:
    """Per-category and overall means.

    ``rows`` maps each category (and ``"overall"``) to count plus F1 / BLEU-1
    / EM / judge means; judge means skip UNAVAILABLE labels, which are
    counted in ``judge_unavailable``.
    """

    rows: dict
    seeds: tuple = ()
    judge_unavailable: int = 0
    runs: int = 1

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "seeds": list(self.seeds),
            "judge_unavailable": self.judge_unavailable,
            "runs": self.runs,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RewardReport":
        return cls(data["rows"], tuple(data.get("seeds", ())), data.get("judge_unavailable", 0), data.get("runs", 1))

    def overall(self, key: str = "f1"):
        return self.rows["overall"][key]

    def to_table(self) -> str:
        header = f"{'category':<12} {'n':>5} {'F1':>8} {'B1':>8} {'EM':>8} {'J':>8}"
        lines = [header, "-" * len(header)]

        def fmt(value):
            return f"{100 * value:8.2f}" if value is not None else f"{'-':>8}"

        for name in (*CATEGORIES, "overall"):
            row = self.rows[name]
            lines.append(
                f"{name:<12} {row['count']:>5} {fmt(row['f1'])} {fmt(row['bleu1'])} {fmt(row['em'])} {fmt(row['judge'])}"
            )
        if self.judge_unavailable:
            lines.append(f"judge unavailable for {self.judge_unavailable} answers (excluded from J)")
        return "\n".join(lines) + "\n"


def _mean(values):
    return sum(values) / len(values) if values else None


def _row(scores: Sequence[ScoreTriple]) -> dict:
    judged = [s.judge for s in scores if s.judge is not None and s.judge is not JudgeLabel.UNAVAILABLE]
    return {
        "count": len(scores),
        "f1": _mean([s.f1 for s in scores]),
        "bleu1": _mean([s.bleu1 for s in scores]),
        "em": _mean([s.em for s in scores]),
        "judge": _mean([1.0 if j is JudgeLabel.CORRECT else 0.0 for j in judged]),
        "judge_count": len(judged),
    }


def aggregate_report(scores: Sequence[ScoreTriple], categories: Sequence[str], seed=None) -> RewardReport:
    """Per-category means plus the question-weighted overall mean."""
    if not scores:
        raise EmptyInput("no scores to aggregate")
    if len(scores) != len(categories):
        raise ValueError("scores and categories differ in length")
    unknown = set(categories) - set(CATEGORIES)
    if unknown:
        raise ValueError(f"unknown categories {sorted(unknown)}")
    rows = {name: _row([s for s, c in zip(scores, categories) if c == name]) for name in CATEGORIES}
    rows["overall"] = _row(list(scores))
    unavailable = sum(s.judge is JudgeLabel.UNAVAILABLE for s in scores)
    return RewardReport(rows, () if seed is None else (seed,), unavailable)


def average_reports(reports: Sequence[RewardReport]) -> RewardReport:
    """Mean of each metric across repeated runs (counts must agree)."""
    if not reports:
        raise EmptyInput("no reports to average")
    rows = {}
    for name in reports[0].rows:
        row = dict(reports[0].rows[name])
        for key in METRIC_KEYS:
            values = [r.rows[name][key] for r in reports]
            if any(v is None for v in values):
                row[key] = None
            elif len(set(values)) == 1:
                # identical runs (greedy decoding) must reproduce the single-run value exactly
                row[key] = values[0]
            else:
                row[key] = math.fsum(values) / len(values)
        rows[name] = row
    seeds = tuple(s for r in reports for s in r.seeds)
    return RewardReport(rows, seeds, sum(r.judge_unavailable for r in reports), len(reports))
