"""Embedding and similarity-ranked top-k retrieval over a memory bank."""

from __future__ import annotations

import hashlib
import heapq
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .exceptions import DimensionMismatch
from .memory import MemoryBank, MemoryEntry

DEFAULT_DIM = 256
MANAGER_K = 10
ANSWER_K = 60

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric unigrams."""
    return _TOKEN_RE.findall(text.lower())


def _bucket(token: str, dim: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


class HashingEmbedder:
    """Hashed bag-of-unigrams, L2-normalised. Deterministic across processes.

    Texts without tokens map to the zero vector.
    """

    def __init__(self, dim: int = DEFAULT_DIM, cache_size: int = 65536):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.cache_size = cache_size
        self._cache: dict[str, np.ndarray] = {}

    def __call__(self, text: str) -> np.ndarray:
        vec = self._cache.get(text)
        if vec is None:
            vec = self._embed(text)
            if len(self._cache) >= self.cache_size:
                self._cache.clear()
            self._cache[text] = vec
        return vec

    def _embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for token in tokenize(text):
            vec[_bucket(token, self.dim)] += 1.0
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        vec.setflags(write=False)
        return vec


_default_embedder = HashingEmbedder()


def embed_text(text: str, embedder: Callable[[str], np.ndarray] | None = None) -> np.ndarray:
    return (embedder or _default_embedder)(text)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimension {a.shape} != {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


@dataclass(frozen=True)
class RetrievedMemory:
    entry: MemoryEntry
    score: float
    index: int  # insertion position in the bank

    @property
    def id(self) -> str:
        return self.entry.id

    @property
    def text(self) -> str:
        return self.entry.text


@dataclass(frozen=True)
class RankedRetrieval:
    """Retrieved memories, best first.

    A per-participant retrieval is the concatenation of one ranking per
    speaker; ``sections`` lists ``(speaker, count)`` in order and the
    non-increasing score invariant holds within each section.
    """

    items: tuple[RetrievedMemory, ...]
    query_text: str
    sections: tuple[tuple[str | None, int], ...] = ()

    def __post_init__(self):
        if not self.sections:
            object.__setattr__(self, "sections", ((None, len(self.items)),))

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, i):
        return self.items[i]

    def ids(self) -> list[str]:
        return [item.id for item in self.items]

    def scores(self) -> list[float]:
        return [item.score for item in self.items]

    def best(self) -> RetrievedMemory | None:
        """Highest-similarity item across all sections (earliest on ties)."""
        if not self.items:
            return None
        return min(self.items, key=lambda it: (-it.score, it.index))


class Retriever:
    """Top-k cosine retrieval with a per-entry embedding cache.

    The cache is keyed by entry id and revalidated against the entry text, so
    an UPDATE is picked up on the next query.
    """

    def __init__(self, embedder: Callable[[str], np.ndarray] | None = None):
        self.embedder = embedder or _default_embedder
        self._cache: dict[str, tuple[str, np.ndarray]] = {}

    def vector(self, entry: MemoryEntry) -> np.ndarray:
        hit = self._cache.get(entry.id)
        if hit is None or hit[0] != entry.text:
            hit = (entry.text, self.embedder(entry.text))
            self._cache[entry.id] = hit
        return hit[1]

    def score_all(self, query: str, bank: MemoryBank, where=None) -> list[RetrievedMemory]:
        q = self.embedder(query)
        scored = []
        for index, entry in enumerate(bank):
            if where is not None and not where(entry):
                continue
            scored.append(RetrievedMemory(entry, cosine_similarity(q, self.vector(entry)), index))
        return scored

    def retrieve(self, query: str, bank: MemoryBank, k: int, where=None) -> RankedRetrieval:
        if k < 1:
            raise ValueError("k must be >= 1")
        scored = self.score_all(query, bank, where)
        top = heapq.nsmallest(k, scored, key=lambda it: (-it.score, it.index))
        return RankedRetrieval(tuple(top), query)

    def retrieve_per_participant(
        self, query: str, bank: MemoryBank, k_per_participant: int, participants: Sequence[str] | None = None
    ) -> RankedRetrieval:
        """Top ``k_per_participant`` from each speaker's memories, concatenated.

        Speaker order defaults to order of first appearance in the bank.
        """
        if participants is None:
            participants = speakers_in(bank)
        items: list[RetrievedMemory] = []
        sections = []
        for speaker in participants:
            part = self.retrieve(query, bank, k_per_participant, where=lambda e, s=speaker: e.speaker == s)
            items.extend(part.items)
            sections.append((speaker, len(part)))
        return RankedRetrieval(tuple(items), query, tuple(sections))


def speakers_in(entries: Iterable[MemoryEntry]) -> list[str]:
    seen: dict[str, None] = {}
    for entry in entries:
        if entry.speaker is not None:
            seen.setdefault(entry.speaker)
    return list(seen)


def retrieve_top_k(query: str, bank: MemoryBank, k: int, retriever: Retriever | None = None) -> RankedRetrieval:
    return (retriever or Retriever()).retrieve(query, bank, k)
