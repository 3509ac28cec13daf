"""Seeded multi-session dialogues with ground-truth memory operations.

Each fact is an attribute sentence about one participant ("I adopted a dog
named Rex"). A fact follows exactly one script:

* introduce only (oracle ADD), asked as single-hop;
* introduce, then revise with a second value (ADD, UPDATE), asked as multi-hop;
* introduce, negate, reintroduce with a new value (ADD, DELETE, ADD), asked as temporal;
* introduce, then restate in paraphrase (ADD, NOOP), asked as open-domain.

The partner answers each fact turn with an acknowledgement or, at
``distractor_rate``, a musing that mentions the same noun without naming
anything. Distractors become memories (oracle ADD) that look relevant to the
question but carry no answer.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .answer_rules import UNKNOWN, markers
from .dataset import Dialogue, DialogueTurn, QAPair, Session, dumps_locomo, loads_locomo
from .exceptions import FormatError
from .extraction import RuleExtractor
from .memory import MemoryBank, MemoryOperationDecision, OpKind

SIDECAR_FORMAT = "memrl-synthetic"
SIDECAR_VERSION = 1

# (noun, verb, marker): intro "I {verb} a {noun} {marker} X"
TEMPLATES = (
    ("dog", "adopted", "named"),
    ("cat", "rescued", "named"),
    ("boat", "bought", "called"),
    ("book", "wrote", "titled"),
    ("band", "started", "called"),
    ("horse", "rode", "named"),
    ("car", "restored", "called"),
    ("painting", "finished", "titled"),
    ("song", "composed", "titled"),
    ("bakery", "opened", "called"),
    ("podcast", "launched", "called"),
    ("parrot", "raised", "named"),
    ("garden", "planted", "called"),
    ("blog", "created", "titled"),
    ("telescope", "built", "called"),
)

SPEAKER_PAIRS = (
    ("Caroline", "Melanie"),
    ("John", "Maria"),
    ("Andrew", "Audrey"),
    ("Joanna", "Nate"),
    ("Deborah", "Jolene"),
    ("Evan", "Sam"),
)

VALUES = """
Rex Scout Buddy Luna Milo Bella Max Daisy Oliver Coco Pepper Ziggy Nova Biscuit Maple Juniper Clover Rocket
Willow Hazel Sable Orion Pixel Mango Tango Echo Falcon Comet Atlas Ember Indigo Jasper Kona Lyric Marble
Nimbus Olive Pico Quill Rumble Saffron Thistle Umber Velvet Wren Yonder Zephyr Aspen Bramble Cinder Dune
Fable Gizmo Harbor Iris Jolly Kestrel Lark Meadow Nutmeg Onyx Pebble Quartz Ripple Sprout Tundra Vesper
""".split()

ACKS = (
    "Wow, that's great news!",
    "That sounds fun!",
    "Oh nice!",
    "That's so cool!",
    "Congrats!",
    "Sounds lovely.",
)

RESTATE_PREFIXES = ("Remember, ", "Like I said, ", "As I mentioned, ")
ASIDES = ("Did I ever tell you?", "Guess what?", "Have I mentioned this?")

MONTHS = "January February March April May June July August September October November December".split()

CATEGORY_BY_SCRIPT = {
    "intro": "single-hop",
    "revised": "multi-hop",
    "contradicted": "temporal",
    "restated": "open-domain",
}

EVENT_KINDS = ("introduce", "revise", "negate", "reintroduce", "restate", "distractor")


@dataclass(frozen=True)
class SyntheticEvent:
    """One scripted turn; ``slot`` is ``None`` for distractors."""

    turn_id: str
    kind: str
    speaker: str
    slot: str | None
    value: str | None = None

    @property
    def oracle_kind(self) -> OpKind:
        return {
            "introduce": OpKind.ADD,
            "reintroduce": OpKind.ADD,
            "distractor": OpKind.ADD,
            "revise": OpKind.UPDATE,
            "negate": OpKind.DELETE,
            "restate": OpKind.NOOP,
        }[self.kind]


@dataclass(frozen=True)
class SyntheticScript:
    """Events in dialogue order, their oracle operations and the final answers.

    ``oracle_answers`` maps each slot to its final gold answer; ``probes``
    holds one QA per non-distractor event whose gold is the slot's state just
    after that event ("unknown" after a negation).
    """

    events: tuple[SyntheticEvent, ...]
    oracle_answers: dict
    probes: tuple[QAPair, ...] = ()
    slot_questions: dict = field(default_factory=dict)
    seed: int | None = None

    @property
    def oracle_operations(self) -> tuple[OpKind, ...]:
        return tuple(e.oracle_kind for e in self.events)

    def event_for_turn(self, turn_id: str) -> SyntheticEvent | None:
        return self._by_turn().get(turn_id)

    def slot_turns(self, slot: str) -> set[str]:
        return {e.turn_id for e in self.events if e.slot == slot}

    def _by_turn(self) -> dict:
        cache = self.__dict__.get("_turn_index")
        if cache is None:
            cache = {e.turn_id: e for e in self.events}
            object.__setattr__(self, "_turn_index", cache)
        return cache

    def to_record(self) -> dict:
        return {
            "format": SIDECAR_FORMAT,
            "version": SIDECAR_VERSION,
            "seed": self.seed,
            "events": [
                {
                    "turn_id": e.turn_id,
                    "kind": e.kind,
                    "speaker": e.speaker,
                    "slot": e.slot,
                    "value": e.value,
                    "oracle": e.oracle_kind.value,
                }
                for e in self.events
            ],
            "oracle_answers": self.oracle_answers,
            "slot_questions": self.slot_questions,
            "probes": [q.to_record() for q in self.probes],
        }

    @classmethod
    def from_record(cls, record: dict) -> "SyntheticScript":
        if record.get("format") != SIDECAR_FORMAT:
            raise FormatError("not a synthetic oracle sidecar", "$.format")
        events = tuple(
            SyntheticEvent(e["turn_id"], e["kind"], e["speaker"], e["slot"], e.get("value")) for e in record["events"]
        )
        probes = tuple(
            QAPair(q["question"], q["answer"], q["category"], tuple(q.get("evidence", ()))) for q in record["probes"]
        )
        return cls(events, dict(record["oracle_answers"]), probes, dict(record["slot_questions"]), record.get("seed"))


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def _intro(template, value):
    noun, verb, marker = template
    return f"I {verb} a {noun} {marker} {value}."


def _revision(template, value):
    noun, verb, marker = template
    return f"I {verb} another {noun} {marker} {value}."


def _negation(template, value):
    noun, _, marker = template
    return f"I no longer have the {noun} {marker} {value}."


def _distractor(template):
    noun, _, marker = template
    return f"I wonder what the {noun} was {marker} after."


def _question(template, speaker):
    noun, verb, marker = template
    return f"What was the {noun} {speaker} {verb} {marker}?"


def _stamp(rng: random.Random, day_index: int) -> str:
    hour = rng.randint(1, 12)
    minute = rng.randint(0, 59)
    half = rng.choice(("am", "pm"))
    month = MONTHS[(4 + day_index // 28) % 12]
    day = 1 + day_index % 28
    return f"{hour}:{minute:02d} {half} on {day} {month}, 2023"


def _script_kind(rng: random.Random, revision_rate, contradiction_rate, restatement_rate) -> str:
    if rng.random() < revision_rate:
        return "revised"
    if rng.random() < contradiction_rate:
        return "contradicted"
    if rng.random() < restatement_rate:
        return "restated"
    return "intro"


def generate_synthetic(
    seed: int,
    n_sessions: int = 3,
    n_facts: int = 12,
    revision_rate: float = 0.5,
    contradiction_rate: float = 0.4,
    restatement_rate: float = 0.7,
    distractor_rate: float = 0.5,
    dialogue_id: str | None = None,
):
    """Build one dialogue, its oracle script and its final-state QA pairs.

    A pure function of its arguments. Returns ``(dialogue, script, qa)``;
    ``dialogue.qa`` is ``qa``.
    """
    for name, rate in (
        ("revision_rate", revision_rate),
        ("contradiction_rate", contradiction_rate),
        ("restatement_rate", restatement_rate),
        ("distractor_rate", distractor_rate),
    ):
        if not 0.0 <= rate <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {rate}")
    if n_sessions < 1:
        raise ValueError("n_sessions must be >= 1")
    if not 0 <= n_facts <= 2 * len(TEMPLATES):
        raise ValueError(f"n_facts must be in [0, {2 * len(TEMPLATES)}]")

    rng = random.Random(seed)
    speakers = SPEAKER_PAIRS[rng.randrange(len(SPEAKER_PAIRS))]
    values = iter(rng.sample(VALUES, len(VALUES)))

    # each fact is a (speaker, template) slot; templates repeat (for the other speaker) only when needed
    templates = rng.sample(TEMPLATES, len(TEMPLATES))
    owners = [rng.choice(speakers) for _ in templates]
    chosen = list(zip(owners, templates))
    chosen += [(speakers[1] if o == speakers[0] else speakers[0], t) for o, t in zip(owners, templates)]
    chosen = chosen[:n_facts]

    # per-fact event queues, in the order they must occur
    plans = []
    for speaker, template in chosen:
        kind = _script_kind(rng, revision_rate, contradiction_rate, restatement_rate)
        first = next(values)
        queue = [("introduce", first)]
        if kind == "revised":
            queue.append(("revise", next(values)))
        elif kind == "contradicted":
            queue += [("negate", first), ("reintroduce", next(values))]
        elif kind == "restated":
            queue.append(("restate", first))
        plans.append({"speaker": speaker, "template": template, "kind": kind, "queue": queue})

    # interleave the queues, choosing a fact in proportion to its remaining events
    order = []
    pending = [len(p["queue"]) for p in plans]
    cursor = [0] * len(plans)
    while sum(pending):
        pick = rng.choices(range(len(plans)), weights=pending)[0]
        order.append((pick, plans[pick]["queue"][cursor[pick]]))
        cursor[pick] += 1
        pending[pick] -= 1

    # lay the events out as turns: fact turn by the owner, reply by the partner
    raw_turns = []  # (speaker, text, event kind, slot index, value)
    for pick, (kind, value) in order:
        plan = plans[pick]
        template = plan["template"]
        owner = plan["speaker"]
        partner = speakers[1] if owner == speakers[0] else speakers[0]
        if kind in ("introduce", "reintroduce"):
            text = _intro(template, value)
        elif kind == "revise":
            text = _revision(template, value)
        elif kind == "negate":
            text = _negation(template, value)
        else:
            text = rng.choice(ASIDES) + " " + rng.choice(RESTATE_PREFIXES) + _intro(template, value)
        raw_turns.append((owner, text, kind, pick, value))
        if rng.random() < distractor_rate:
            raw_turns.append((partner, _distractor(template), "distractor", None, None))
        else:
            raw_turns.append((partner, rng.choice(ACKS), None, None, None))

    # split into sessions on fact-turn boundaries
    pairs = len(raw_turns) // 2
    n_sessions = max(1, min(n_sessions, pairs)) if pairs else 1
    bounds = [round(i * pairs / n_sessions) * 2 for i in range(n_sessions + 1)]
    dialogue_id = dialogue_id or f"synthetic-{seed}"
    sessions = []
    events = []
    day = rng.randrange(20)
    for s in range(n_sessions):
        stamp = _stamp(rng, day)
        day += rng.randint(3, 20)
        session_id = f"session_{s + 1}"
        turns = []
        for i, (speaker, text, kind, pick, value) in enumerate(raw_turns[bounds[s] : bounds[s + 1]]):
            turn_id = f"D{s + 1}:{i + 1}"
            turns.append(DialogueTurn(turn_id, speaker, text, stamp, session_id))
            if kind is not None:
                slot = None if pick is None else _slot_key(plans[pick])
                events.append(SyntheticEvent(turn_id, kind, speaker, slot, value))
        sessions.append(Session(session_id, stamp, tuple(turns)))

    # final answers, per-event probes and final-state questions
    questions = {_slot_key(p): _question(p["template"], p["speaker"]) for p in plans}
    state: dict[str, list[str]] = {}
    probes = []
    evidence: dict[str, list[str]] = {}
    category = {_slot_key(p): CATEGORY_BY_SCRIPT[p["kind"]] for p in plans}
    for event in events:
        if event.slot is None:
            continue
        evidence.setdefault(event.slot, []).append(event.turn_id)
        if event.kind in ("introduce", "reintroduce"):
            state[event.slot] = [event.value]
        elif event.kind == "revise":
            state[event.slot].append(event.value)
        elif event.kind == "negate":
            state[event.slot] = []
        gold = " and ".join(state[event.slot]) or UNKNOWN
        probes.append(QAPair(questions[event.slot], gold, category[event.slot], (event.turn_id,)))
    answers = {slot: " and ".join(vals) for slot, vals in state.items()}
    qa = tuple(
        QAPair(questions[_slot_key(p)], answers[_slot_key(p)], category[_slot_key(p)], tuple(evidence[_slot_key(p)]))
        for p in plans
    )
    dialogue = Dialogue(dialogue_id, tuple(sessions), qa)
    script = SyntheticScript(tuple(events), answers, tuple(probes), questions, seed)
    return dialogue, script, qa


def _slot_key(plan) -> str:
    return f"{plan['speaker']}/{plan['template'][0]}"


def generate_corpus(seed: int, n_dialogues: int = 10, **kwargs):
    """``n_dialogues`` independent dialogues with derived seeds; returns ``(dialogues, scripts)``."""
    rng = random.Random(seed)
    dialogues, scripts = [], []
    for i in range(n_dialogues):
        dialogue, script, _ = generate_synthetic(rng.randrange(2**31), dialogue_id=f"synthetic-{seed}-{i}", **kwargs)
        dialogues.append(dialogue)
        scripts.append(script)
    return dialogues, scripts


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------


def _slot_entry(bank: MemoryBank, script: SyntheticScript, slot: str):
    turns = script.slot_turns(slot)
    for entry in bank:
        if entry.source_turn in turns:
            return entry
    return None


def oracle_decision(script: SyntheticScript, fact, bank: MemoryBank) -> MemoryOperationDecision:
    """The ground-truth decision for ``fact`` given the bank built so far."""
    provenance = {"timestamp": fact.timestamp, "source_turn": fact.source_turn_id}
    event = script.event_for_turn(fact.source_turn_id)
    if event is None or event.oracle_kind is OpKind.ADD:
        return MemoryOperationDecision.add(fact.text, speaker=fact.speaker, **provenance)
    target = _slot_entry(bank, script, event.slot)
    if target is None:
        return MemoryOperationDecision.add(fact.text, speaker=fact.speaker, **provenance)
    if event.oracle_kind is OpKind.UPDATE:
        return MemoryOperationDecision.update(target.id, f"{target.text}; {fact.text}", old_text=target.text, **provenance)
    if event.oracle_kind is OpKind.DELETE:
        return MemoryOperationDecision.delete(target.id, old_text=target.text)
    return MemoryOperationDecision.noop(target.id)


def oracle_bootstrap(script: SyntheticScript):
    """A ``build_manager_tuples`` bootstrap that builds temporal banks with oracle operations."""

    def bootstrap(fact, bank, retriever=None):
        return oracle_decision(script, fact, bank)

    return bootstrap


def replay_oracle(dialogue: Dialogue, script: SyntheticScript, extractor=None) -> MemoryBank:
    """Apply the oracle operation for every extracted fact, from an empty bank."""
    extractor = extractor or RuleExtractor()
    bank = MemoryBank()
    for turn in dialogue.turns:
        for fact in extractor.extract(turn):
            bank.apply(oracle_decision(script, fact, bank), strict=True)
    return bank


def oracle_lookup(bank: MemoryBank, script: SyntheticScript, question: str) -> str:
    """Exact lookup: the named values in the slot's entry, or "unknown"."""
    slot = next((s for s, q in script.slot_questions.items() if q == question), None)
    entry = None if slot is None else _slot_entry(bank, script, slot)
    if entry is None:
        return UNKNOWN
    return markers(entry.text) or UNKNOWN


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------


def dumps_sidecar(scripts: Iterable[SyntheticScript], dialogue_ids: Sequence[str]) -> str:
    body = {did: script.to_record() for did, script in zip(dialogue_ids, scripts)}
    return json.dumps(body, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def loads_sidecar(text: str) -> dict[str, SyntheticScript]:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, "<sidecar>", exc.pos) from None
    return {did: SyntheticScript.from_record(record) for did, record in data.items()}


def sidecar_path(corpus_path) -> Path:
    path = Path(corpus_path)
    return path.with_name(path.stem + ".oracle.json")


def save_corpus(path, dialogues: Sequence[Dialogue], scripts: Sequence[SyntheticScript]) -> Path:
    """Write the corpus file and its oracle sidecar next to it; returns the sidecar path."""
    path = Path(path)
    path.write_text(dumps_locomo(dialogues), encoding="utf-8")
    side = sidecar_path(path)
    side.write_text(dumps_sidecar(scripts, [d.dialogue_id for d in dialogues]), encoding="utf-8")
    return side


def load_corpus(path):
    """Read a corpus and its sidecar; returns ``(dialogues, scripts)`` in corpus order."""
    path = Path(path)
    corpus = loads_locomo(path.read_text(encoding="utf-8"), str(path))
    scripts = loads_sidecar(sidecar_path(path).read_text(encoding="utf-8"))
    dialogues = list(corpus.dialogues)
    missing = [d.dialogue_id for d in dialogues if d.dialogue_id not in scripts]
    if missing:
        raise FormatError(f"sidecar lacks dialogues {missing}", str(sidecar_path(path)))
    return dialogues, [scripts[d.dialogue_id] for d in dialogues]
