"""Memory bank data model and the ADD / UPDATE / DELETE / NOOP engine.

The bank is a single-writer store: every mutation goes through
:meth:`MemoryBank.apply`, which validates the decision, executes it, bumps the
logical event clock and appends an :class:`OperationRecord` to the audit log.
Entries are immutable values, so :meth:`MemoryBank.copy` is cheap and copies
can be handed to readers as snapshots.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Iterable, Iterator, Sequence

from .exceptions import (
    CorruptBank,
    ForbiddenField,
    MissingField,
    ParseError,
    SchemaError,
    UnknownTarget,
    ValidationError,
)

logger = logging.getLogger(__name__)

BANK_FORMAT = "memrl-bank"
BANK_VERSION = 1


class OpKind(str, Enum):
    ADD = "ADD"
    UPDATE = "UPDATE"
    DELETE = "DELETE"
    NOOP = "NOOP"

    @property
    def index(self) -> int:
        return OP_KINDS.index(self)


# Order matters: it is the row order of the manager policy's logits and the
# tie-break order for greedy decoding.
OP_KINDS = (OpKind.ADD, OpKind.UPDATE, OpKind.DELETE, OpKind.NOOP)


@dataclass(frozen=True)
class MemoryEntry:
    id: str
    text: str
    created_at: int
    updated_at: int
    history: tuple[str, ...] = ()
    speaker: str | None = None
    timestamp: str | None = None
    source_turn: str | None = None

    def to_record(self) -> dict:
        record = asdict(self)
        record["history"] = list(self.history)
        return record

    @classmethod
    def from_record(cls, record: dict) -> "MemoryEntry":
        return cls(
            id=str(record["id"]),
            text=record["text"],
            created_at=int(record["created_at"]),
            updated_at=int(record["updated_at"]),
            history=tuple(record.get("history", ())),
            speaker=record.get("speaker"),
            timestamp=record.get("timestamp"),
            source_turn=record.get("source_turn"),
        )


@dataclass(frozen=True)
class MemoryOperationDecision:
    """One manager action.

    ``speaker``, ``timestamp`` and ``source_turn`` are provenance carried onto
    the entry an ADD creates (or refreshed by an UPDATE); they play no part in
    validation.
    """

    kind: OpKind
    target_id: str | None = None
    new_text: str | None = None
    old_text: str | None = None
    speaker: str | None = None
    timestamp: str | None = None
    source_turn: str | None = None

    def __post_init__(self):
        if not isinstance(self.kind, OpKind):
            object.__setattr__(self, "kind", OpKind(self.kind))
        if self.target_id is not None and not isinstance(self.target_id, str):
            object.__setattr__(self, "target_id", str(self.target_id))

    @classmethod
    def add(cls, text, **provenance):
        return cls(OpKind.ADD, new_text=text, **provenance)

    @classmethod
    def update(cls, target_id, text, old_text=None, **provenance):
        return cls(OpKind.UPDATE, target_id=target_id, new_text=text, old_text=old_text, **provenance)

    @classmethod
    def delete(cls, target_id, old_text=None):
        return cls(OpKind.DELETE, target_id=target_id, old_text=old_text)

    @classmethod
    def noop(cls, target_id=None):
        return cls(OpKind.NOOP, target_id=target_id)


@dataclass(frozen=True)
class OperationOutcome:
    applied: bool
    kind_applied: OpKind
    affected_id: str | None
    bank_size_after: int
    violation: ValidationError | None = field(default=None, compare=False)


@dataclass(frozen=True)
class OperationRecord:
    """One line of the append-only operation log (what was actually applied)."""

    event_clock: int
    kind: OpKind
    target_id: str | None = None
    new_text: str | None = None
    old_text: str | None = None
    speaker: str | None = None
    timestamp: str | None = None
    source_turn: str | None = None

    def to_record(self) -> dict:
        record = {"event_clock": self.event_clock, "kind": self.kind.value}
        for key in ("target_id", "new_text", "old_text", "speaker", "timestamp", "source_turn"):
            value = getattr(self, key)
            if value is not None:
                record[key] = value
        return record

    @classmethod
    def from_record(cls, record: dict) -> "OperationRecord":
        return cls(
            event_clock=int(record["event_clock"]),
            kind=OpKind(record["kind"]),
            target_id=record.get("target_id"),
            new_text=record.get("new_text"),
            old_text=record.get("old_text"),
            speaker=record.get("speaker"),
            timestamp=record.get("timestamp"),
            source_turn=record.get("source_turn"),
        )


def _blank(text) -> bool:
    return text is None or not str(text).strip()


def validate_decision(decision: MemoryOperationDecision, bank: "MemoryBank") -> ValidationError | None:
    """Return ``None`` if ``decision`` is valid against ``bank``, else the violation.

    The violation is returned, not raised, so callers can choose between
    demotion and strict failure.
    """
    kind = decision.kind
    if kind is OpKind.ADD:
        if decision.target_id is not None:
            return ForbiddenField("ADD must not carry target_id", "ADD => target_id absent")
        if _blank(decision.new_text):
            return MissingField("ADD requires non-empty new_text", "ADD => new_text present")
        return None
    if kind is OpKind.UPDATE:
        if decision.target_id is None:
            return MissingField("UPDATE requires target_id", "UPDATE => target_id present")
        if _blank(decision.new_text):
            return MissingField("UPDATE requires non-empty new_text", "UPDATE => new_text present")
    elif kind is OpKind.DELETE:
        if decision.target_id is None:
            return MissingField("DELETE requires target_id", "DELETE => target_id present")
        if decision.new_text is not None:
            return ForbiddenField("DELETE must not carry new_text", "DELETE => new_text absent")
    else:
        if decision.new_text is not None:
            return ForbiddenField("NOOP must not carry new_text", "NOOP => new_text absent")
        if decision.target_id is None:
            return None
    if decision.target_id not in bank:
        return UnknownTarget(f"no entry with id {decision.target_id!r}", "target_id exists in bank")
    return None


class MemoryBank:
    """Insertion-ordered collection of :class:`MemoryEntry` with monotonic ids."""

    def __init__(self, entries: Iterable[MemoryEntry] = (), next_id: int = 0, event_clock: int = 0):
        self._entries: dict[str, MemoryEntry] = {}
        for entry in entries:
            if entry.id in self._entries:
                raise ValueError(f"duplicate entry id {entry.id!r}")
            self._entries[entry.id] = entry
        numeric = [int(i) for i in self._entries if i.isdigit()]
        self.next_id = max([next_id, *(n + 1 for n in numeric)])
        self.event_clock = event_clock
        self.log: list[OperationRecord] = []

    def __len__(self):
        return len(self._entries)

    def __iter__(self) -> Iterator[MemoryEntry]:
        return iter(self._entries.values())

    def __contains__(self, entry_id) -> bool:
        return entry_id in self._entries

    def __getitem__(self, entry_id) -> MemoryEntry:
        return self._entries[entry_id]

    def __eq__(self, other):
        if not isinstance(other, MemoryBank):
            return NotImplemented
        return self.state() == other.state()

    def __repr__(self):
        return f"MemoryBank(size={len(self)}, next_id={self.next_id}, event_clock={self.event_clock})"

    @property
    def entries(self) -> tuple[MemoryEntry, ...]:
        return tuple(self._entries.values())

    def ids(self) -> list[str]:
        return list(self._entries)

    def get(self, entry_id, default=None):
        return self._entries.get(entry_id, default)

    def index_of(self, entry_id) -> int:
        return self.ids().index(entry_id)

    def state(self) -> tuple:
        """Hashable observable state (entries in order, counters)."""
        return (self.entries, self.next_id, self.event_clock)

    def copy(self) -> "MemoryBank":
        clone = MemoryBank.__new__(MemoryBank)
        clone._entries = dict(self._entries)
        clone.next_id = self.next_id
        clone.event_clock = self.event_clock
        clone.log = list(self.log)
        return clone

    def apply(self, decision: MemoryOperationDecision, strict: bool = False) -> OperationOutcome:
        """Execute ``decision`` in place.

        Invalid decisions raise in strict mode and are demoted to NOOP otherwise.
        """
        violation = validate_decision(decision, self)
        if violation is not None:
            if strict:
                raise violation
            logger.info("demoting %s to NOOP: %s", decision.kind.value, violation)
            decision = MemoryOperationDecision(OpKind.NOOP)

        self.event_clock += 1
        clock = self.event_clock
        kind = decision.kind
        affected = decision.target_id
        record = OperationRecord(clock, kind, target_id=decision.target_id)

        if kind is OpKind.ADD:
            affected = str(self.next_id)
            self.next_id += 1
            entry = MemoryEntry(
                id=affected,
                text=decision.new_text,
                created_at=clock,
                updated_at=clock,
                speaker=decision.speaker,
                timestamp=decision.timestamp,
                source_turn=decision.source_turn,
            )
            self._entries[affected] = entry
            record = replace(
                record,
                target_id=affected,
                new_text=decision.new_text,
                speaker=decision.speaker,
                timestamp=decision.timestamp,
                source_turn=decision.source_turn,
            )
        elif kind is OpKind.UPDATE:
            old = self._entries[affected]
            self._entries[affected] = replace(
                old,
                text=decision.new_text,
                updated_at=clock,
                history=old.history + (old.text,),
                timestamp=decision.timestamp or old.timestamp,
                source_turn=decision.source_turn or old.source_turn,
            )
            record = replace(
                record,
                new_text=decision.new_text,
                old_text=old.text,
                timestamp=decision.timestamp,
                source_turn=decision.source_turn,
            )
        elif kind is OpKind.DELETE:
            old = self._entries.pop(affected)
            record = replace(record, old_text=old.text)

        self.log.append(record)
        return OperationOutcome(
            applied=violation is None,
            kind_applied=kind,
            affected_id=affected,
            bank_size_after=len(self),
            violation=violation,
        )

    def to_records(self) -> list[dict]:
        return [entry.to_record() for entry in self]


def apply_operation(
    bank: MemoryBank, decision: MemoryOperationDecision, strict: bool = False
) -> tuple[MemoryBank, OperationOutcome]:
    """Functional form of :meth:`MemoryBank.apply`; ``bank`` is left untouched."""
    new_bank = bank.copy()
    outcome = new_bank.apply(decision, strict=strict)
    return new_bank, outcome


def replay_log(records: Iterable[OperationRecord], strict: bool = True) -> MemoryBank:
    """Rebuild a bank by replaying an operation log from an empty bank."""
    bank = MemoryBank()
    for record in records:
        if record.kind is OpKind.ADD:
            if record.target_id is not None and record.target_id != str(bank.next_id):
                raise CorruptBank(f"log ADD expects id {bank.next_id}, found {record.target_id}")
            decision = MemoryOperationDecision(
                OpKind.ADD,
                new_text=record.new_text,
                speaker=record.speaker,
                timestamp=record.timestamp,
                source_turn=record.source_turn,
            )
        elif record.kind is OpKind.UPDATE:
            decision = MemoryOperationDecision(
                OpKind.UPDATE,
                target_id=record.target_id,
                new_text=record.new_text,
                timestamp=record.timestamp,
                source_turn=record.source_turn,
            )
        elif record.kind is OpKind.DELETE:
            decision = MemoryOperationDecision(OpKind.DELETE, target_id=record.target_id)
        else:
            decision = MemoryOperationDecision(OpKind.NOOP, target_id=record.target_id)
        bank.apply(decision, strict=strict)
        if bank.event_clock != record.event_clock:
            raise CorruptBank(f"log clock {record.event_clock} does not match replay clock {bank.event_clock}")
    return bank


def write_log(records: Iterable[OperationRecord], destination) -> None:
    lines = [json.dumps(r.to_record(), ensure_ascii=False, sort_keys=True) for r in records]
    _write_text(destination, "".join(line + "\n" for line in lines))


def read_log(source) -> list[OperationRecord]:
    text = _read_text(source)
    return [OperationRecord.from_record(json.loads(line)) for line in text.splitlines() if line.strip()]


# ---------------------------------------------------------------------------
# manager output format
# ---------------------------------------------------------------------------

_EVENT_TO_KIND = {"ADD": OpKind.ADD, "UPDATE": OpKind.UPDATE, "DELETE": OpKind.DELETE, "NONE": OpKind.NOOP}
_WS = " \t\r\n"


def _byte_offset(text: str, char_pos: int) -> int:
    return len(text[:char_pos].encode("utf-8"))


class _Scanner:
    """Walks the top-level object so errors can be reported with offsets."""

    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.decoder = json.JSONDecoder()

    def skip(self):
        while self.pos < len(self.text) and self.text[self.pos] in _WS:
            self.pos += 1

    def fail(self, message, pos=None):
        raise ParseError(message, _byte_offset(self.text, self.pos if pos is None else pos))

    def expect(self, char):
        self.skip()
        if self.pos >= len(self.text) or self.text[self.pos] != char:
            self.fail(f"expected {char!r}")
        self.pos += 1

    def value(self):
        self.skip()
        try:
            obj, end = self.decoder.raw_decode(self.text, self.pos)
        except json.JSONDecodeError as exc:
            self.fail(exc.msg, exc.pos)
        start, self.pos = self.pos, end
        return start, obj

    def memory_records(self) -> list[tuple[int, object]]:
        self.skip()
        if self.pos >= len(self.text) or self.text[self.pos] != "{":
            self.fail("expected a JSON object with key 'memory'")
        object_start = self.pos
        self.pos += 1
        records = None
        self.skip()
        if self.text[self.pos : self.pos + 1] == "}":
            self.pos += 1
        else:
            while True:
                key_start, key = self.value()
                if not isinstance(key, str):
                    self.fail("object keys must be strings", key_start)
                self.expect(":")
                if key == "memory":
                    records = self._array()
                else:
                    self.value()
                self.skip()
                if self.text[self.pos : self.pos + 1] == ",":
                    self.pos += 1
                    continue
                self.expect("}")
                break
        self.skip()
        if self.pos != len(self.text):
            self.fail("trailing characters after object")
        if records is None:
            raise SchemaError("missing key 'memory'", _byte_offset(self.text, object_start))
        return records

    def _array(self):
        self.skip()
        if self.text[self.pos : self.pos + 1] != "[":
            raise SchemaError("'memory' must be a list", _byte_offset(self.text, self.pos))
        self.pos += 1
        items = []
        self.skip()
        if self.text[self.pos : self.pos + 1] == "]":
            self.pos += 1
            return items
        while True:
            items.append(self.value())
            self.skip()
            if self.text[self.pos : self.pos + 1] == ",":
                self.pos += 1
                continue
            self.expect("]")
            return items


def parse_decisions(raw, bank: MemoryBank | None = None) -> list[MemoryOperationDecision]:
    """Parse a ``{"memory": [...]}`` manager output into decisions, in listed order.

    ``NONE`` records become NOOPs that keep their ``id`` as target. When a bank
    is given, an UPDATE record without ``old_memory`` gets the bank's current
    text as ``old_text``.
    """
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8")
    scanner = _Scanner(raw)
    decisions = []
    for start, record in scanner.memory_records():
        offset = _byte_offset(raw, start)
        if not isinstance(record, dict):
            raise SchemaError("memory records must be objects", offset)
        event = record.get("event")
        if not isinstance(event, str) or event.upper() not in _EVENT_TO_KIND:
            raise SchemaError(f"missing or unknown event {event!r}", offset)
        if "id" not in record or record["id"] is None:
            raise SchemaError("missing id", offset)
        kind = _EVENT_TO_KIND[event.upper()]
        entry_id = str(record["id"])
        text = record.get("text")
        if kind in (OpKind.ADD, OpKind.UPDATE) and not isinstance(text, str):
            raise SchemaError(f"{kind.value} record needs text", offset)
        if kind is OpKind.ADD:
            decisions.append(MemoryOperationDecision(OpKind.ADD, new_text=text))
        elif kind is OpKind.UPDATE:
            old = record.get("old_memory")
            if old is None and bank is not None and entry_id in bank:
                old = bank[entry_id].text
            decisions.append(MemoryOperationDecision(OpKind.UPDATE, target_id=entry_id, new_text=text, old_text=old))
        elif kind is OpKind.DELETE:
            decisions.append(MemoryOperationDecision(OpKind.DELETE, target_id=entry_id, old_text=text))
        else:
            decisions.append(MemoryOperationDecision(OpKind.NOOP, target_id=entry_id))
    return decisions


def render_decisions(decisions: Sequence[MemoryOperationDecision], bank: MemoryBank) -> str:
    """Render decisions in the manager-output format (inverse of :func:`parse_decisions`).

    ADD ids are the ids the bank would assign when the decisions are applied in
    order.
    """
    next_id = bank.next_id
    records = []
    for d in decisions:
        if d.kind is OpKind.ADD:
            records.append({"id": str(next_id), "text": d.new_text, "event": "ADD"})
            next_id += 1
        elif d.kind is OpKind.UPDATE:
            old = d.old_text if d.old_text is not None else _bank_text(bank, d.target_id)
            records.append({"id": d.target_id, "text": d.new_text, "event": "UPDATE", "old_memory": old})
        elif d.kind is OpKind.DELETE:
            text = d.old_text if d.old_text is not None else _bank_text(bank, d.target_id)
            records.append({"id": d.target_id, "text": text, "event": "DELETE"})
        else:
            if d.target_id is None:
                raise ValueError("a NOOP without target_id has no record in the memory list")
            records.append({"id": d.target_id, "text": _bank_text(bank, d.target_id), "event": "NONE"})
    return json.dumps({"memory": records}, indent=4, ensure_ascii=False)


def _bank_text(bank, entry_id):
    entry = bank.get(entry_id)
    if entry is None:
        raise UnknownTarget(f"no entry with id {entry_id!r}")
    return entry.text


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _read_text(source) -> str:
    if hasattr(source, "read"):
        data = source.read()
        return data.decode("utf-8") if isinstance(data, bytes) else data
    with open(source, encoding="utf-8") as fh:
        return fh.read()


def _write_text(destination, text: str) -> None:
    if hasattr(destination, "write"):
        destination.write(text)
        return
    tmp = f"{destination}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, destination)


def dumps_bank(bank: MemoryBank) -> str:
    lines = [json.dumps(e.to_record(), ensure_ascii=False, sort_keys=True) for e in bank]
    digest = hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()
    header = {
        "format": BANK_FORMAT,
        "version": BANK_VERSION,
        "next_id": bank.next_id,
        "event_clock": bank.event_clock,
        "entries": len(lines),
        "sha256": digest,
    }
    return "".join(line + "\n" for line in [json.dumps(header, sort_keys=True), *lines])


def loads_bank(text: str) -> MemoryBank:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise CorruptBank("empty bank file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorruptBank(f"unreadable header: {exc}") from None
    if not isinstance(header, dict) or header.get("format") != BANK_FORMAT:
        raise CorruptBank("not a memrl bank file")
    if header.get("version") != BANK_VERSION:
        raise CorruptBank(f"unsupported bank version {header.get('version')!r}")
    body = lines[1:]
    if len(body) != header.get("entries"):
        raise CorruptBank(f"expected {header.get('entries')} entries, found {len(body)}")
    if hashlib.sha256("\n".join(body).encode("utf-8")).hexdigest() != header.get("sha256"):
        raise CorruptBank("checksum mismatch")
    try:
        entries = [MemoryEntry.from_record(json.loads(line)) for line in body]
        bank = MemoryBank(entries, next_id=int(header["next_id"]), event_clock=int(header["event_clock"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptBank(f"schema mismatch: {exc}") from None
    if bank.next_id != header["next_id"]:
        raise CorruptBank("next_id is not above every stored id")
    return bank


def save_bank(bank: MemoryBank, destination) -> None:
    """Write ``bank`` as line-delimited JSON: one header line, then one line per entry."""
    _write_text(destination, dumps_bank(bank))


def load_bank(source) -> MemoryBank:
    return loads_bank(_read_text(source))


def bank_from_texts(texts: Iterable[str], speaker=None) -> MemoryBank:
    """Convenience: a bank holding ``texts`` as ADDed entries, in order."""
    bank = MemoryBank()
    for text in texts:
        bank.apply(MemoryOperationDecision(OpKind.ADD, new_text=text, speaker=speaker), strict=True)
    return bank


__all__ = [
    "OpKind",
    "OP_KINDS",
    "MemoryEntry",
    "MemoryBank",
    "MemoryOperationDecision",
    "OperationOutcome",
    "OperationRecord",
    "validate_decision",
    "apply_operation",
    "parse_decisions",
    "render_decisions",
    "save_bank",
    "load_bank",
    "dumps_bank",
    "loads_bank",
    "replay_log",
    "write_log",
    "read_log",
    "bank_from_texts",
]
