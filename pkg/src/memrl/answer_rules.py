"""Rule-based answer span extraction used by the parametric answer policy."""

from __future__ import annotations

import re

from .retrieval import tokenize

UNKNOWN = "unknown"

STOPWORDS = frozenset(
    """
    a about after all also am an and any are as at be been before being but by can could did do does doing
    during ever for from had has have having he her hers him his how i if in into is it its just me more
    most my no nor of on once only or other our ours out over own same she should so some such than that
    the their theirs them then there these they this those through to too under until up very was we were
    what when where which while who whom whose why will with would you your yours many much
    """.split()
)

NUMBER_WORDS = frozenset(
    "one two three four five six seven eight nine ten eleven twelve several a few couple".split()
)

_WORD_RE = re.compile(r"[A-Za-z0-9]+")
_HOW_MANY_RE = re.compile(r"\bhow many\s+([a-z0-9]+)")
_CHOICE_RE = re.compile(r"\b([a-z0-9]+)\s+or\s+(?:the\s+|a\s+|an\s+)?([a-z0-9]+)")
_MARKER_RE = re.compile(r"\b(?:named|called|titled)\s+['\"]?([A-Z][A-Za-z0-9]*)")

RULES = ("auto", "marker", "span")


def keywords(text: str) -> list[str]:
    """Content tokens of ``text`` in order, first occurrence only."""
    seen: dict[str, None] = {}
    for token in tokenize(text):
        if token not in STOPWORDS:
            seen.setdefault(token)
    return list(seen)


def _same_noun(a: str, b: str) -> bool:
    return a == b or a.rstrip("s") == b.rstrip("s")


def how_many(question: str, memory: str) -> str | None:
    """An explicit count before the asked noun, else the number of items the memory names."""
    match = _HOW_MANY_RE.search(question.lower())
    if match is None:
        return None
    noun = match.group(1)
    words = _WORD_RE.findall(memory)
    counted = [(prev, word) for prev, word in zip(words, words[1:])
               if _same_noun(word.lower(), noun) and (prev.isdigit() or prev.lower() in NUMBER_WORDS)]
    for prev, word in counted:
        if prev.lower() != "a":
            return f"{prev} {word}"
    # a consolidated memory ("a dog named Buddy; another dog named Scout") counts its names
    named = markers(memory)
    mentions = [w for w in words if _same_noun(w.lower(), noun)]
    if named and mentions and len(named.split(" and ")) > 1:
        return f"{len(named.split(' and '))} {noun}"
    if counted:
        return " ".join(counted[0])
    return None


def choice(question: str, memory: str) -> str | None:
    match = _CHOICE_RE.search(question.lower())
    if match is None:
        return None
    options = [match.group(1), match.group(2)]
    tokens = tokenize(memory)
    present = [(tokens.index(o), o) for o in options if o in tokens]
    if not present:
        return None
    return min(present)[1]


def markers(memory: str) -> str | None:
    values = _MARKER_RE.findall(memory)
    return " and ".join(values) if values else None


def longest_span(question: str, memory: str) -> str | None:
    """Longest run of memory words that are neither question words nor stopwords."""
    asked = set(tokenize(question))
    best: list[str] = []
    run: list[str] = []
    for word in _WORD_RE.findall(memory):
        lowered = word.lower()
        if lowered in asked or lowered in STOPWORDS:
            run = []
            continue
        run.append(word)
        if len(run) > len(best):
            best = list(run)
    return " ".join(best) if best else None


def extract_answer(question: str, memory: str, rule: str = "auto") -> str:
    if rule == "marker":
        return markers(memory) or UNKNOWN
    if rule == "span":
        return longest_span(question, memory) or UNKNOWN
    if rule != "auto":
        raise ValueError(f"unknown answer rule {rule!r}")
    for extractor in (how_many, choice):
        answer = extractor(question, memory)
        if answer:
            return answer
    return markers(memory) or longest_span(question, memory) or UNKNOWN
