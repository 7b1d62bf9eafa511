"""Lexical top-k retrieval: an in-process Okapi BM25 index plus a client
for an external retrieval service speaking a small JSON protocol.

Scoring contract (kept deliberately plain so it can be checked against a
brute-force reference):
  idf(t)    = max(0, ln((N - df + 0.5) / (df + 0.5)))
  score(q,d)= sum over query token occurrences of
              idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len_d / avg_len))
Ties are broken by ascending passage id, which makes rankings total and
deterministic.
"""
from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass

import requests

from .corpus import CorpusStore
from .types import Passage

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


class RetrievalError(ValueError):
    pass


class RemoteRetrievalError(RuntimeError):
    pass


class RemoteTransportError(RemoteRetrievalError):
    pass


class RemoteTimeoutError(RemoteTransportError):
    pass


class RemoteSchemaError(RemoteRetrievalError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase and split on any non-alphanumeric run. No stemming, no stopwords."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class RankedPassages:
    items: tuple[tuple[Passage, float], ...]
    k_requested: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "items", tuple((p, float(s)) for p, s in self.items))

    def passages(self) -> tuple[Passage, ...]:
        return tuple(p for p, _ in self.items)

    def __len__(self) -> int:
        return len(self.items)


class BM25Index:
    """Inverted index over a frozen corpus store.

    Documents are tokenized as "title text" (title prepended when present);
    postings map each term to (doc, term frequency) pairs and scoring walks
    only the postings of the query's terms.
    """

    def __init__(self, store: CorpusStore, k1: float = DEFAULT_K1, b: float = DEFAULT_B):
        if len(store) == 0:
            raise RetrievalError("cannot index an empty corpus")
        if k1 <= 0:
            raise RetrievalError(f"k1 must be > 0, got {k1}")
        if not 0.0 <= b <= 1.0:
            raise RetrievalError(f"b must be in [0, 1], got {b}")
        self.k1 = float(k1)
        self.b = float(b)
        self._store = store
        self._ids: list[str] = []
        doc_lens: list[int] = []
        postings: dict[str, list[tuple[int, int]]] = {}
        for doc_idx, p in enumerate(store):
            toks = tokenize(f"{p.title} {p.text}" if p.title else p.text)
            self._ids.append(p.id)
            doc_lens.append(len(toks))
            for term, freq in Counter(toks).items():
                postings.setdefault(term, []).append((doc_idx, freq))
        n = len(self._ids)
        self.doc_count = n
        self.avg_doc_len = sum(doc_lens) / n
        self._postings = postings
        self._idf = {
            t: max(0.0, math.log((n - len(plist) + 0.5) / (len(plist) + 0.5)))
            for t, plist in postings.items()
        }
        self._norm = [
            self.k1 * (1.0 - self.b + self.b * dl / self.avg_doc_len) for dl in doc_lens
        ]

    @property
    def corpus_checksum(self) -> str:
        return self._store.checksum

    def search(self, query_text: str, k: int) -> RankedPassages:
        if k < 1:
            raise RetrievalError(f"k must be >= 1, got {k}")
        q_tokens = tokenize(query_text)
        if not q_tokens:
            raise RetrievalError(f"query {query_text!r} tokenizes to nothing")
        scores = [0.0] * self.doc_count
        for term in q_tokens:
            idf = self._idf.get(term)
            if not idf:
                continue
            for doc_idx, f in self._postings[term]:
                scores[doc_idx] += idf * f * (self.k1 + 1.0) / (f + self._norm[doc_idx])
        order = sorted(range(self.doc_count), key=lambda i: (-scores[i], self._ids[i]))
        top = order[: min(k, self.doc_count)]
        items = tuple((self._store.get(self._ids[i]), scores[i]) for i in top)
        return RankedPassages(items=items, k_requested=k)


def build_index(store: CorpusStore, k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> BM25Index:
    return BM25Index(store, k1=k1, b=b)


def remote_retrieve(
    endpoint: str,
    query_text: str,
    k: int,
    timeout: float = 10.0,
    session: requests.Session | None = None,
) -> RankedPassages:
    """POST {"query", "k"} to the endpoint and normalize the response.

    The response is re-sorted, de-duplicated, and truncated defensively so
    the RankedPassages invariants hold no matter what the server returns.
    """
    if k < 1:
        raise RetrievalError(f"k must be >= 1, got {k}")
    http = session or requests
    try:
        resp = http.post(endpoint, json={"query": query_text, "k": k}, timeout=timeout)
    except requests.Timeout as e:
        raise RemoteTimeoutError(f"retriever timed out after {timeout}s") from e
    except requests.RequestException as e:
        raise RemoteTransportError(f"retriever request failed: {e}") from e
    if resp.status_code < 200 or resp.status_code >= 300:
        raise RemoteTransportError(f"retriever returned HTTP {resp.status_code}")
    try:
        payload = resp.json()
        results = payload["results"]
        parsed = [
            (Passage(id=r["id"], title=r.get("title", ""), text=r["text"]), float(r["score"]))
            for r in results
        ]
    except (ValueError, KeyError, TypeError) as e:
        raise RemoteSchemaError(f"retriever response does not match schema: {e}") from e

    best: dict[str, tuple[Passage, float]] = {}
    for passage, score in parsed:
        kept = best.get(passage.id)
        if kept is None or score > kept[1]:
            best[passage.id] = (passage, score)
    ranked = sorted(best.values(), key=lambda it: (-it[1], it[0].id))[:k]
    return RankedPassages(items=tuple(ranked), k_requested=k)


class RemoteRetriever:
    """Adapter giving remote retrieval the same search() surface as BM25Index."""

    def __init__(self, endpoint: str, timeout: float = 10.0):
        self.endpoint = endpoint
        self.timeout = timeout
        self._session = requests.Session()

    def search(self, query_text: str, k: int) -> RankedPassages:
        return remote_retrieve(self.endpoint, query_text, k, timeout=self.timeout, session=self._session)
