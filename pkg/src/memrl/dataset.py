"""LOCOMO-format loading, the 1:1:8 split, and training-tuple construction."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from .exceptions import FormatError, TooFewDialogues
from .extraction import extract_facts
from .memory import MemoryBank, MemoryOperationDecision
from .metrics import CATEGORIES
from .retrieval import MANAGER_K, RankedRetrieval, Retriever

logger = logging.getLogger(__name__)

ADVERSARIAL = "adversarial"
CATEGORY_CODES = {1: "multi-hop", 2: "temporal", 3: "open-domain", 4: "single-hop", 5: ADVERSARIAL}
_CATEGORY_ALIASES = {name.replace("-", "_"): name for name in (*CATEGORIES, ADVERSARIAL)}

MANAGER_WINDOW = 50
ANSWER_K_PER_PARTICIPANT = 30
BOOTSTRAP_MATCH = 0.5


@dataclass(frozen=True)
class DialogueTurn:
    turn_id: str
    speaker: str
    text: str
    timestamp: str | None = None
    session_id: str | None = None


@dataclass(frozen=True)
class QAPair:
    question: str
    gold_answer: str
    category: str
    evidence_turn_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"category must be one of {CATEGORIES}, got {self.category!r}")
        object.__setattr__(self, "evidence_turn_ids", tuple(self.evidence_turn_ids))

    def to_record(self) -> dict:
        return {
            "question": self.question,
            "answer": self.gold_answer,
            "category": self.category,
            "evidence": list(self.evidence_turn_ids),
        }


@dataclass(frozen=True)
class Session:
    session_id: str
    datetime: str | None
    turns: tuple[DialogueTurn, ...]


@dataclass(frozen=True)
class Dialogue:
    dialogue_id: str
    sessions: tuple[Session, ...]
    qa: tuple[QAPair, ...] = ()

    @property
    def turns(self) -> list[DialogueTurn]:
        return [t for s in self.sessions for t in s.turns]

    @property
    def speakers(self) -> list[str]:
        """Participants in order of first appearance."""
        seen: dict[str, None] = {}
        for turn in self.turns:
            seen.setdefault(turn.speaker)
        return list(seen)

    def to_record(self) -> dict:
        return {
            "dialogue_id": self.dialogue_id,
            "sessions": [
                {
                    "session_id": s.session_id,
                    "datetime": s.datetime,
                    "turns": [{"turn_id": t.turn_id, "speaker": t.speaker, "text": t.text} for t in s.turns],
                }
                for s in self.sessions
            ],
            "qa": [q.to_record() for q in self.qa],
        }


@dataclass(frozen=True)
class LocomoCorpus:
    dialogues: tuple[Dialogue, ...]
    adversarial_dropped: int = 0

    def __iter__(self):
        return iter(self.dialogues)

    def __len__(self):
        return len(self.dialogues)

    def __getitem__(self, i):
        return self.dialogues[i]

    @property
    def qa(self) -> list[QAPair]:
        return [q for d in self.dialogues for q in d.qa]


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def _field(record, key, path, kind=None):
    if not isinstance(record, dict):
        raise FormatError("expected an object", path)
    if key not in record:
        raise FormatError(f"missing field {key!r}", path)
    value = record[key]
    if kind is not None and not isinstance(value, kind):
        raise FormatError(f"field {key!r} has type {type(value).__name__}", f"{path}.{key}")
    return value


def parse_category(value, path="") -> str:
    if isinstance(value, bool):
        raise FormatError(f"bad category {value!r}", path)
    if isinstance(value, int):
        if value not in CATEGORY_CODES:
            raise FormatError(f"unknown category code {value}", path)
        return CATEGORY_CODES[value]
    if isinstance(value, str):
        key = value.strip().lower().replace("-", "_").replace(" ", "_")
        if key.isdigit():
            return parse_category(int(key), path)
        if key in _CATEGORY_ALIASES:
            return _CATEGORY_ALIASES[key]
    raise FormatError(f"unknown category {value!r}", path)


def _parse_dialogue(record, path) -> tuple[Dialogue, int]:
    dialogue_id = str(_field(record, "dialogue_id", path))
    sessions = []
    seen_turns: set[str] = set()
    for si, srec in enumerate(_field(record, "sessions", path, list)):
        spath = f"{path}.sessions[{si}]"
        session_id = str(_field(srec, "session_id", spath))
        stamp = srec.get("datetime")
        turns = []
        for ti, trec in enumerate(_field(srec, "turns", spath, list)):
            tpath = f"{spath}.turns[{ti}]"
            turn_id = str(_field(trec, "turn_id", tpath))
            if turn_id in seen_turns:
                raise FormatError(f"duplicate turn_id {turn_id!r}", tpath)
            seen_turns.add(turn_id)
            turns.append(
                DialogueTurn(
                    turn_id,
                    str(_field(trec, "speaker", tpath, str)),
                    str(_field(trec, "text", tpath, str)),
                    stamp,
                    session_id,
                )
            )
        sessions.append(Session(session_id, stamp, tuple(turns)))
    qa = []
    dropped = 0
    for qi, qrec in enumerate(record.get("qa", [])):
        qpath = f"{path}.qa[{qi}]"
        category = parse_category(_field(qrec, "category", qpath), f"{qpath}.category")
        if category == ADVERSARIAL:
            dropped += 1
            continue
        evidence = qrec.get("evidence") or []
        if isinstance(evidence, str):
            evidence = [evidence]
        qa.append(
            QAPair(
                str(_field(qrec, "question", qpath, str)),
                str(_field(qrec, "answer", qpath)),
                category,
                tuple(str(e) for e in evidence),
            )
        )
    return Dialogue(dialogue_id, tuple(sessions), tuple(qa)), dropped


def loads_locomo(text: str, path: str = "<string>") -> LocomoCorpus:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, path, len(text[: exc.pos].encode("utf-8"))) from None
    if isinstance(data, dict) and "dialogues" in data:
        data = data["dialogues"]
    if not isinstance(data, list):
        raise FormatError("top level must be a list of dialogues", path, 0)
    dialogues = []
    dropped = 0
    for i, record in enumerate(data):
        try:
            dialogue, n = _parse_dialogue(record, f"$[{i}]")
        except FormatError as exc:
            raise FormatError(str(exc), path) from None
        dialogues.append(dialogue)
        dropped += n
    if dropped:
        logger.warning("dropped %d adversarial question(s) without ground-truth answers", dropped)
    return LocomoCorpus(tuple(dialogues), dropped)


def load_locomo(source) -> LocomoCorpus:
    if hasattr(source, "read"):
        return loads_locomo(source.read(), getattr(source, "name", "<stream>"))
    with open(source, encoding="utf-8") as fh:
        return loads_locomo(fh.read(), str(source))


def dumps_locomo(dialogues: Iterable[Dialogue]) -> str:
    return json.dumps([d.to_record() for d in dialogues], indent=2, ensure_ascii=False, sort_keys=True) + "\n"


def split_dataset(dialogues: Sequence[Dialogue]):
    """First dialogue for training, second for validation, the rest for testing."""
    dialogues = list(dialogues)
    if len(dialogues) < 3:
        raise TooFewDialogues(f"the split needs at least 3 dialogues, got {len(dialogues)}")
    return dialogues[:1], dialogues[1:2], dialogues[2:]


# ---------------------------------------------------------------------------
# training tuples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManagerTuple:
    temporal_bank: MemoryBank
    current_turn: DialogueTurn
    qa: tuple[QAPair, ...]
    turn_index: int = 0
    window_start: int = 0
    speakers: tuple[str, ...] = ()


@dataclass(frozen=True)
class AnswerTuple:
    question: str
    retrieved: RankedRetrieval
    gold_answer: str
    category: str


def bootstrap_decision(fact, bank: MemoryBank, retriever: Retriever) -> MemoryOperationDecision:
    """Default temporal-bank builder: UPDATE the speaker's best match if close enough, else ADD."""
    hit = retriever.retrieve(fact.text, bank, 1, where=lambda e: e.speaker == fact.speaker)
    provenance = {"timestamp": fact.timestamp, "source_turn": fact.source_turn_id}
    if hit.items and hit[0].score >= BOOTSTRAP_MATCH:
        best = hit[0]
        return MemoryOperationDecision.update(best.id, f"{best.text}; {fact.text}", old_text=best.text, **provenance)
    return MemoryOperationDecision.add(fact.text, speaker=fact.speaker, **provenance)


def build_manager_tuples(
    dialogue: Dialogue,
    extractor,
    window: int | None = MANAGER_WINDOW,
    bootstrap: Callable | None = None,
    qa: Sequence[QAPair] | None = None,
    retriever: Retriever | None = None,
) -> list[ManagerTuple]:
    """One tuple per turn: a bank built from the preceding ``window`` turns, the turn, and its QAs.

    ``bootstrap(fact, bank, retriever)`` chooses how window facts enter the
    bank; ``qa`` overrides the dialogue's own QA pairs (the synthetic path
    passes per-event probes here).
    """
    retriever = retriever or Retriever()
    bootstrap = bootstrap or bootstrap_decision
    qa = dialogue.qa if qa is None else tuple(qa)
    turns = dialogue.turns
    facts_by_turn = [extract_facts(t, extractor) for t in turns]
    speakers = tuple(dialogue.speakers)
    tuples = []
    for t, turn in enumerate(turns):
        start = 0 if window is None else max(0, t - window)
        bank = MemoryBank()
        for prior in facts_by_turn[start:t]:
            for fact in prior:
                bank.apply(bootstrap(fact, bank, retriever))
        linked = tuple(q for q in qa if turn.turn_id in q.evidence_turn_ids)
        tuples.append(ManagerTuple(bank, turn, linked, t, start, speakers))
    return tuples


def build_answer_tuples(
    dialogue: Dialogue,
    bank: MemoryBank,
    k_per_participant: int = ANSWER_K_PER_PARTICIPANT,
    retriever: Retriever | None = None,
    qa: Sequence[QAPair] | None = None,
) -> list[AnswerTuple]:
    retriever = retriever or Retriever()
    speakers = dialogue.speakers
    out = []
    for q in dialogue.qa if qa is None else qa:
        retrieved = retriever.retrieve_per_participant(q.question, bank, k_per_participant, speakers)
        out.append(AnswerTuple(q.question, retrieved, q.gold_answer, q.category))
    return out
