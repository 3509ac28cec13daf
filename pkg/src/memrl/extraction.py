"""Fact extraction from dialogue turns: a deterministic rule stub and an LLM-backed variant."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .exceptions import ExtractorUnavailable, GatewayError
from .retrieval import tokenize

_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")

ACK_WORDS = frozenset(
    """
    that s thats great news wow nice sounds sound fun good to hear oh really haha cool awesome thanks thank
    you ok okay sure yes yeah lol amazing so glad happy for congrats congratulations lovely wonderful
    """.split()
)

# first-person forms rewritten to the speaker's name; possessives get "'s"
_FIRST_PERSON = [
    (re.compile(r"\bI'm\b"), "{name} is"),
    (re.compile(r"\bI've\b"), "{name} has"),
    (re.compile(r"\bI'd\b"), "{name} would"),
    (re.compile(r"\bI'll\b"), "{name} will"),
    (re.compile(r"\b(?:I|me|myself|we|us)\b", re.IGNORECASE), "{name}"),
    (re.compile(r"\b(?:my|mine|our|ours)\b", re.IGNORECASE), "{name}'s"),
]


@dataclass(frozen=True)
class ExtractedFact:
    text: str
    source_turn_id: str
    speaker: str | None = None
    timestamp: str | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("fact text must be non-empty")


def split_sentences(text: str) -> list[str]:
    return [s.strip() for s in _SENTENCE_RE.split(text.strip()) if s.strip()]


def is_acknowledgement(sentence: str) -> bool:
    tokens = tokenize(sentence)
    return not tokens or all(t in ACK_WORDS for t in tokens)


def rewrite_first_person(sentence: str, speaker: str) -> str:
    for pattern, replacement in _FIRST_PERSON:
        sentence = pattern.sub(replacement.format(name=speaker), sentence)
    return sentence


class RuleExtractor:
    """Sentence split; drop questions and acknowledgements; rewrite first person to the speaker."""

    def extract(self, turn) -> list[ExtractedFact]:
        facts = []
        for sentence in split_sentences(turn.text):
            if sentence.endswith("?") or is_acknowledgement(sentence):
                continue
            text = rewrite_first_person(sentence, turn.speaker).rstrip(".!").strip()
            if text:
                facts.append(ExtractedFact(text, turn.turn_id, turn.speaker, turn.timestamp))
        return facts

    __call__ = extract


EXTRACTION_PROMPT = (
    "Extract the durable personal facts stated in the dialogue turn below as a JSON list of short "
    "declarative sentences about the speaker, written in the third person with the speaker's name. "
    "Return [] if the turn states no facts.\n\nSpeaker: {speaker}\nTurn: {text}\n"
)


class LLMExtractor:
    """Extraction through the gateway; any gateway failure becomes ExtractorUnavailable."""

    def __init__(self, gateway, max_tokens: int = 2048):
        self.gateway = gateway
        self.max_tokens = max_tokens

    def extract(self, turn) -> list[ExtractedFact]:
        from .gateway import GatewayRequest

        if not turn.text.strip():
            return []
        request = GatewayRequest.user(EXTRACTION_PROMPT.format(speaker=turn.speaker, text=turn.text), temperature=0.0)
        try:
            reply = self.gateway.chat_complete(request).text
        except GatewayError as exc:
            raise ExtractorUnavailable(str(exc)) from exc
        start, end = reply.find("["), reply.rfind("]")
        try:
            items = json.loads(reply[start : end + 1]) if start != -1 and end > start else []
        except json.JSONDecodeError as exc:
            raise ExtractorUnavailable(f"unparseable extractor reply: {exc}") from exc
        return [
            ExtractedFact(str(item).strip(), turn.turn_id, turn.speaker, turn.timestamp)
            for item in items
            if str(item).strip()
        ]

    __call__ = extract


def extract_facts(turn, extractor=None) -> list[ExtractedFact]:
    if extractor is None:
        raise ExtractorUnavailable("no extractor configured")
    return (extractor.extract if hasattr(extractor, "extract") else extractor)(turn)
