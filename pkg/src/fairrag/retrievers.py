"""Retrieval scoring: built-in BM25, external run files, and rankings.

Scores are per-query maps from item id to a finite real. The sampling
pipeline consumes scores min-max normalized into [1, 2]; rankings are
score-descending with deterministic item-id tie-breaking.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .collection import Query, TestCollection, UtilityLabelSet

__all__ = [
    "ScoreVector",
    "NormalizedScoreVector",
    "RankedList",
    "ScoreFileError",
    "bm25_score",
    "load_scores",
    "save_scores",
    "minmax_normalize",
    "deterministic_rank",
    "oracle_permutation",
]


class ScoreFileError(ValueError):
    """Malformed or inconsistent score run file."""


@dataclass(frozen=True)
class ScoreVector:
    """Raw retrieval scores covering one query's corpus exactly once."""

    query_id: str
    scores: Mapping[str, float]

    def __post_init__(self) -> None:
        for item_id, value in self.scores.items():
            if not math.isfinite(value):
                raise ValueError(
                    f"query {self.query_id!r}: non-finite score for {item_id!r}"
                )


@dataclass(frozen=True)
class NormalizedScoreVector:
    """Min-max normalized scores; every value lies in [1, 2]."""

    query_id: str
    scores: Mapping[str, float]

    def __post_init__(self) -> None:
        for item_id, value in self.scores.items():
            if not (1.0 <= value <= 2.0):
                raise ValueError(
                    f"query {self.query_id!r}: normalized score for {item_id!r} "
                    f"outside [1, 2]: {value}"
                )


@dataclass(frozen=True)
class RankedList:
    """A duplicate-free ordering of item ids, truncated to ``truncation_k``."""

    query_id: str
    ordered_items: tuple[str, ...]
    truncation_k: int

    def __post_init__(self) -> None:
        if len(set(self.ordered_items)) != len(self.ordered_items):
            raise ValueError(f"query {self.query_id!r}: ranking contains duplicates")

    def __len__(self) -> int:
        return len(self.ordered_items)


def _tokens(text: str) -> list[str]:
    return text.lower().split()


def bm25_score(query: Query, k1: float = 1.2, b: float = 0.75) -> ScoreVector:
    """Okapi BM25 of each corpus item against the query input.

    Whitespace-lowercased tokens, IDF with +0.5 smoothing floored at 0,
    length normalization against the per-query average document length.
    A query with no tokens scores every item 0.
    """
    if k1 <= 0:
        raise ValueError("k1 must be positive")
    if not (0.0 <= b <= 1.0):
        raise ValueError("b must lie in [0, 1]")
    docs = [_tokens(item.text) for item in query.corpus]
    n_docs = len(docs)
    avgdl = sum(len(d) for d in docs) / n_docs
    term_freqs = [Counter(d) for d in docs]
    df: Counter[str] = Counter()
    for tf in term_freqs:
        df.update(tf.keys())
    idf = {
        term: max(0.0, math.log((n_docs - count + 0.5) / (count + 0.5)))
        for term, count in df.items()
    }
    query_tokens = _tokens(query.input_text)
    scores: dict[str, float] = {}
    for item, tf, doc in zip(query.corpus, term_freqs, docs):
        dl = len(doc)
        norm = k1 * (1.0 - b + b * dl / avgdl) if avgdl > 0 else k1
        total = 0.0
        for term in query_tokens:
            freq = tf.get(term)
            if not freq:
                continue
            total += idf[term] * freq * (k1 + 1.0) / (freq + norm)
        scores[item.item_id] = total
    return ScoreVector(query_id=query.query_id, scores=scores)


def load_scores(
    path: str | Path,
    collection: TestCollection,
    retriever_name: str = "run",
) -> dict[str, ScoreVector]:
    """Read a ``query_id<TAB>item_id<TAB>score`` run file.

    Lines starting with ``#`` are ignored. Every (query, item) must resolve
    in the collection. Corpus items absent from the file receive that
    query's minimum observed score, so they rank last but stay sampleable;
    a query with no scored items at all is an error.
    """
    path = Path(path)
    known = {q.query_id: set(q.item_ids) for q in collection.queries}
    raw: dict[str, dict[str, float]] = {}
    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ScoreFileError(
                    f"{path}:{line_no}: expected 3 tab-separated fields, got {len(parts)}"
                )
            query_id, item_id, score_raw = parts
            if query_id not in known:
                raise ScoreFileError(
                    f"{path}:{line_no}: unknown query_id {query_id!r} "
                    f"({retriever_name})"
                )
            if item_id not in known[query_id]:
                raise ScoreFileError(
                    f"{path}:{line_no}: unknown item_id {item_id!r} for query "
                    f"{query_id!r} ({retriever_name})"
                )
            try:
                score = float(score_raw)
            except ValueError as exc:
                raise ScoreFileError(f"{path}:{line_no}: bad score {score_raw!r}") from exc
            if not math.isfinite(score):
                raise ScoreFileError(f"{path}:{line_no}: non-finite score")
            raw.setdefault(query_id, {})[item_id] = score
    result: dict[str, ScoreVector] = {}
    for query in collection.queries:
        scored = raw.get(query.query_id)
        if not scored:
            raise ScoreFileError(
                f"{path}: no scores for query {query.query_id!r} ({retriever_name})"
            )
        floor = min(scored.values())
        full = {iid: scored.get(iid, floor) for iid in query.item_ids}
        result[query.query_id] = ScoreVector(query_id=query.query_id, scores=full)
    return result


def save_scores(score_vectors: Mapping[str, ScoreVector], path: str | Path) -> None:
    """Write score vectors as a run file; inverse of ``load_scores``."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for query_id in sorted(score_vectors):
            vector = score_vectors[query_id]
            for item_id in sorted(vector.scores):
                handle.write(f"{query_id}\t{item_id}\t{vector.scores[item_id]!r}\n")


def minmax_normalize(scores: ScoreVector) -> NormalizedScoreVector:
    """Map scores linearly onto [1, 2]; a constant vector maps to 1.5."""
    values = list(scores.scores.values())
    low, high = min(values), max(values)
    if high == low:
        mapped = {iid: 1.5 for iid in scores.scores}
    else:
        span = high - low
        mapped = {
            iid: 1.0 + (value - low) / span for iid, value in scores.scores.items()
        }
    return NormalizedScoreVector(query_id=scores.query_id, scores=mapped)


def deterministic_rank(
    scores: ScoreVector | NormalizedScoreVector, k: int
) -> RankedList:
    """Sort score-descending, ties broken by ascending item id, truncate to k."""
    if k < 1:
        raise ValueError("k must be at least 1")
    ordered = sorted(scores.scores.items(), key=lambda kv: (-kv[1], kv[0]))
    cutoff = min(k, len(ordered))
    return RankedList(
        query_id=scores.query_id,
        ordered_items=tuple(iid for iid, _ in ordered[:cutoff]),
        truncation_k=k,
    )


def oracle_permutation(
    query: Query,
    labels: UtilityLabelSet,
    k: int,
    rng: np.random.Generator,
) -> RankedList:
    """One draw from the stochastic oracle that ranks all useful items first.

    Uniform random permutation of the useful items followed by a uniform
    random permutation of the rest, truncated to k. Repeated calls with a
    streaming rng realize the uniform distribution over all optimal
    permutations.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    useful = [
        item.item_id
        for item in query.corpus
        if labels.label(query.query_id, item.item_id) == 1
    ]
    other = [
        item.item_id
        for item in query.corpus
        if labels.label(query.query_id, item.item_id) == 0
    ]
    if not useful:
        raise ValueError(
            f"query {query.query_id!r}: oracle requires at least one useful item"
        )
    ordered = [useful[i] for i in rng.permutation(len(useful))]
    ordered += [other[i] for i in rng.permutation(len(other))]
    cutoff = min(k, query.n)
    return RankedList(
        query_id=query.query_id,
        ordered_items=tuple(ordered[:cutoff]),
        truncation_k=k,
    )
