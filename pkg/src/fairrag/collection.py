"""Test collections: loading, validation, filtering, synthesis, and statistics.

A collection is a sequence of queries, each carrying its own corpus of
retrievable items, a target output, and optionally inline binary utility
labels and precomputed retrieval scores. The on-disk format is JSONL with
one query per line (see ``load_collection``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

__all__ = [
    "CollectionError",
    "Item",
    "Query",
    "TestCollection",
    "LabelEntry",
    "UtilityLabelSet",
    "CollectionStats",
    "SyntheticSpec",
    "load_collection",
    "save_collection",
    "load_label_tsv",
    "save_label_tsv",
    "filter_for_fairness",
    "collection_stats",
    "generate_synthetic",
]

FORMAT_VERSION = 1


class CollectionError(ValueError):
    """Malformed, inconsistent, or incomplete collection data."""


@dataclass(frozen=True)
class Item:
    """One retrievable unit of a query's corpus."""

    item_id: str
    text: str
    provider_id: str | None = None

    def __post_init__(self) -> None:
        if not self.item_id:
            raise CollectionError("item_id must be non-empty")
        if not self.text:
            raise CollectionError(f"item {self.item_id!r}: text must be non-empty")


@dataclass(frozen=True)
class Query:
    """An input instance with its target output and per-query corpus."""

    query_id: str
    input_text: str
    target_output: str
    corpus: tuple[Item, ...]

    def __post_init__(self) -> None:
        if not self.query_id:
            raise CollectionError("query_id must be non-empty")
        if len(self.corpus) < 1:
            raise CollectionError(f"query {self.query_id!r}: corpus must be non-empty")
        seen: set[str] = set()
        for item in self.corpus:
            if item.item_id in seen:
                raise CollectionError(
                    f"query {self.query_id!r}: duplicate item_id {item.item_id!r}"
                )
            seen.add(item.item_id)

    @property
    def n(self) -> int:
        return len(self.corpus)

    @property
    def item_ids(self) -> tuple[str, ...]:
        return tuple(item.item_id for item in self.corpus)

    def item(self, item_id: str) -> Item:
        for it in self.corpus:
            if it.item_id == item_id:
                return it
        raise CollectionError(f"query {self.query_id!r}: unknown item_id {item_id!r}")


@dataclass(frozen=True)
class LabelEntry:
    """Binary usefulness label with the utility gain that justified it."""

    label: int
    gain: float

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise CollectionError(f"label must be 0 or 1, got {self.label!r}")
        if (self.gain > 0) != (self.label == 1):
            raise CollectionError(
                f"label/gain inconsistency: label={self.label}, gain={self.gain} "
                "(label must be 1 exactly when gain > 0)"
            )


@dataclass(frozen=True)
class UtilityLabelSet:
    """Binary utility labels keyed by (query_id, item_id)."""

    entries: Mapping[tuple[str, str], LabelEntry]

    def label(self, query_id: str, item_id: str) -> int:
        return self.entries[(query_id, item_id)].label

    def gain(self, query_id: str, item_id: str) -> float:
        return self.entries[(query_id, item_id)].gain

    def useful_items(self, query: Query) -> tuple[str, ...]:
        return tuple(
            item.item_id
            for item in query.corpus
            if self.entries[(query.query_id, item.item_id)].label == 1
        )

    def positive_count(self, query: Query) -> int:
        return len(self.useful_items(query))

    def missing_pairs(self, collection: TestCollection) -> list[tuple[str, str]]:
        return [
            (q.query_id, item.item_id)
            for q in collection.queries
            for item in q.corpus
            if (q.query_id, item.item_id) not in self.entries
        ]

    def require_coverage(self, collection: TestCollection) -> None:
        missing = self.missing_pairs(collection)
        if missing:
            shown = ", ".join(f"{q}/{i}" for q, i in missing[:10])
            more = "" if len(missing) <= 10 else f" (+{len(missing) - 10} more)"
            raise CollectionError(f"labels missing for pairs: {shown}{more}")


@dataclass(frozen=True)
class TestCollection:
    """Validated set of queries; may carry inline labels and retrieval scores."""

    __test__ = False  # keep pytest from collecting this as a test class

    queries: tuple[Query, ...]
    inline_labels: UtilityLabelSet | None = None
    # retriever name -> query_id -> item_id -> score
    inline_scores: Mapping[str, Mapping[str, Mapping[str, float]]] = field(
        default_factory=dict
    )

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for q in self.queries:
            if q.query_id in seen:
                raise CollectionError(f"duplicate query_id {q.query_id!r}")
            seen.add(q.query_id)

    def __len__(self) -> int:
        return len(self.queries)

    def query(self, query_id: str) -> Query:
        for q in self.queries:
            if q.query_id == query_id:
                return q
        raise CollectionError(f"unknown query_id {query_id!r}")


@dataclass(frozen=True)
class CollectionStats:
    """Corpus and label statistics aggregated over the queries of a collection."""

    query_count: int
    avg_docs: float
    std_docs: float
    avg_pos_labels: float
    std_pos_labels: float
    avg_pct_pos: float  # mean over queries of 100 * m / n


def _parse_corpus(raw: object, line_no: int) -> tuple[Item, ...]:
    if not isinstance(raw, list) or not raw:
        raise CollectionError(f"line {line_no}: corpus must be a non-empty list")
    items = []
    for entry in raw:
        if not isinstance(entry, dict):
            raise CollectionError(f"line {line_no}: corpus entries must be objects")
        try:
            items.append(
                Item(
                    item_id=str(entry["item_id"]),
                    text=str(entry["text"]),
                    provider_id=(
                        str(entry["provider_id"]) if "provider_id" in entry else None
                    ),
                )
            )
        except KeyError as exc:
            raise CollectionError(f"line {line_no}: corpus entry missing {exc}") from exc
    return tuple(items)


def load_collection(path: str | Path) -> TestCollection:
    """Load and validate a JSONL collection.

    One query object per line:
    ``{"format_version":1,"query_id":...,"input":...,"target":...,
    "corpus":[{"item_id","text","provider_id"?}],"labels":{id:0|1}?,
    "scores":{name:{id:score}}?}``
    """
    path = Path(path)
    queries: list[Query] = []
    label_entries: dict[tuple[str, str], LabelEntry] = {}
    any_labels = False
    scores: dict[str, dict[str, dict[str, float]]] = {}
    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CollectionError(f"line {line_no}: invalid JSON ({exc})") from exc
            if not isinstance(record, dict):
                raise CollectionError(f"line {line_no}: expected a JSON object")
            version = record.get("format_version")
            if version != FORMAT_VERSION:
                raise CollectionError(
                    f"line {line_no}: unsupported format_version {version!r}"
                )
            for key in ("query_id", "input", "target", "corpus"):
                if key not in record:
                    raise CollectionError(f"line {line_no}: missing field {key!r}")
            try:
                query = Query(
                    query_id=str(record["query_id"]),
                    input_text=str(record["input"]),
                    target_output=str(record["target"]),
                    corpus=_parse_corpus(record["corpus"], line_no),
                )
            except CollectionError as exc:
                raise CollectionError(f"line {line_no}: {exc}") from exc
            if any(q.query_id == query.query_id for q in queries):
                raise CollectionError(
                    f"line {line_no}: duplicate query_id {query.query_id!r}"
                )
            queries.append(query)

            ids = set(query.item_ids)
            raw_labels = record.get("labels")
            if raw_labels is not None:
                any_labels = True
                for item_id, value in raw_labels.items():
                    if item_id not in ids:
                        raise CollectionError(
                            f"line {line_no}: label for unknown item {item_id!r}"
                        )
                    if value not in (0, 1):
                        raise CollectionError(
                            f"line {line_no}: label for {item_id!r} must be 0 or 1"
                        )
                    label_entries[(query.query_id, item_id)] = LabelEntry(
                        label=int(value), gain=float(value)
                    )
            raw_scores = record.get("scores")
            if raw_scores is not None:
                for name, per_item in raw_scores.items():
                    table = scores.setdefault(str(name), {})
                    row: dict[str, float] = {}
                    for item_id, value in per_item.items():
                        if item_id not in ids:
                            raise CollectionError(
                                f"line {line_no}: score for unknown item {item_id!r}"
                            )
                        value = float(value)
                        if not math.isfinite(value):
                            raise CollectionError(
                                f"line {line_no}: non-finite score for {item_id!r}"
                            )
                        row[item_id] = value
                    table[query.query_id] = row
    if not queries:
        raise CollectionError(f"{path}: collection is empty")
    labels = UtilityLabelSet(entries=label_entries) if any_labels else None
    return TestCollection(
        queries=tuple(queries), inline_labels=labels, inline_scores=scores
    )


def save_collection(
    collection: TestCollection,
    path: str | Path,
    labels: UtilityLabelSet | None = None,
) -> None:
    """Write a collection back to JSONL; inverse of ``load_collection``.

    Inline binary labels are taken from ``labels`` when given, otherwise from
    the collection's own inline labels. Gains are not stored here; use the
    label TSV for gain-preserving round trips.
    """
    labels = labels if labels is not None else collection.inline_labels
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for query in collection.queries:
            record: dict[str, object] = {
                "format_version": FORMAT_VERSION,
                "query_id": query.query_id,
                "input": query.input_text,
                "target": query.target_output,
                "corpus": [
                    {
                        "item_id": item.item_id,
                        "text": item.text,
                        **(
                            {"provider_id": item.provider_id}
                            if item.provider_id is not None
                            else {}
                        ),
                    }
                    for item in query.corpus
                ],
            }
            if labels is not None:
                record["labels"] = {
                    item.item_id: labels.label(query.query_id, item.item_id)
                    for item in query.corpus
                    if (query.query_id, item.item_id) in labels.entries
                }
            per_name = {
                name: dict(table[query.query_id])
                for name, table in collection.inline_scores.items()
                if query.query_id in table
            }
            if per_name:
                record["scores"] = per_name
            handle.write(json.dumps(record, sort_keys=False) + "\n")


def load_label_tsv(path: str | Path) -> UtilityLabelSet:
    """Read a ``query_id<TAB>item_id<TAB>label<TAB>gain`` label file."""
    entries: dict[tuple[str, str], LabelEntry] = {}
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise CollectionError(
                    f"{path}:{line_no}: expected 4 tab-separated fields, got {len(parts)}"
                )
            query_id, item_id, label_raw, gain_raw = parts
            try:
                entry = LabelEntry(label=int(label_raw), gain=float(gain_raw))
            except (ValueError, CollectionError) as exc:
                raise CollectionError(f"{path}:{line_no}: {exc}") from exc
            key = (query_id, item_id)
            if key in entries:
                raise CollectionError(
                    f"{path}:{line_no}: duplicate label for {query_id}/{item_id}"
                )
            entries[key] = entry
    return UtilityLabelSet(entries=entries)


def save_label_tsv(labels: UtilityLabelSet, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for (query_id, item_id), entry in labels.entries.items():
            handle.write(f"{query_id}\t{item_id}\t{entry.label}\t{entry.gain!r}\n")


def filter_for_fairness(
    collection: TestCollection, labels: UtilityLabelSet
) -> TestCollection:
    """Drop queries with fewer than two useful items.

    Queries with zero or one positively labeled item make item-fairness
    evaluation vacuous; only queries with m >= 2 are retained, in their
    original order.
    """
    labels.require_coverage(collection)
    kept = tuple(q for q in collection.queries if labels.positive_count(q) >= 2)
    kept_ids = {q.query_id for q in kept}
    scores = {
        name: {qid: row for qid, row in table.items() if qid in kept_ids}
        for name, table in collection.inline_scores.items()
    }
    inline = None
    if collection.inline_labels is not None:
        inline = UtilityLabelSet(
            entries={
                key: entry
                for key, entry in collection.inline_labels.entries.items()
                if key[0] in kept_ids
            }
        )
    return TestCollection(queries=kept, inline_labels=inline, inline_scores=scores)


def collection_stats(
    collection: TestCollection, labels: UtilityLabelSet
) -> CollectionStats:
    """Aggregate corpus-size and positive-label statistics over queries."""
    if len(collection.queries) == 0:
        raise CollectionError("cannot compute stats for an empty collection")
    labels.require_coverage(collection)
    docs = np.array([q.n for q in collection.queries], dtype=float)
    pos = np.array(
        [labels.positive_count(q) for q in collection.queries], dtype=float
    )
    pct = 100.0 * pos / docs
    return CollectionStats(
        query_count=len(collection.queries),
        avg_docs=float(docs.mean()),
        std_docs=float(docs.std()),
        avg_pos_labels=float(pos.mean()),
        std_pos_labels=float(pos.std()),
        avg_pct_pos=float(pct.mean()),
    )


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters for the deterministic synthetic collection builder.

    ``score_gap`` separates planted retrieval scores of useful items from
    distractors; ``noise`` is the standard deviation of Gaussian score noise.
    ``hard_negative_count`` distractors per query receive scores above the
    useful band (high-scoring distracting content). ``pct_neutral`` items
    carry no payload and have exactly zero planted gain.
    """

    query_count: int
    n_range: tuple[int, int]
    pct_useful: float
    score_gap: float
    noise: float
    seed: int
    hard_negative_count: int = 0
    hard_negative_boost: float = 0.3
    pct_neutral: float = 0.0

    def __post_init__(self) -> None:
        lo, hi = self.n_range
        if self.query_count < 1 or lo < 1 or hi < lo:
            raise CollectionError("query_count and n_range must be positive")
        if not (0.0 < self.pct_useful < 1.0):
            raise CollectionError("pct_useful must lie in (0, 1)")
        if self.score_gap <= 0 or self.noise < 0:
            raise CollectionError("score_gap must be positive and noise non-negative")
        if self.hard_negative_count < 0 or self.hard_negative_boost <= 0:
            raise CollectionError("hard negative parameters must be positive")
        if not (0.0 <= self.pct_neutral < 1.0) or self.pct_useful + self.pct_neutral >= 1.0:
            raise CollectionError("pct_neutral must leave room for distractors")


PLANTED_RETRIEVER = "planted"

# Payload tokens are "@"-prefixed so the synthetic generator can recover them
# from a rendered prompt; everything else in an item text is inert filler.
_STUB = "@stub_{qid}"
_ANSWER = "@ans_{qid}_{j}"
_JUNK = "@junk_{qid}_{j}"


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def generate_synthetic(
    spec: SyntheticSpec,
) -> tuple[TestCollection, UtilityLabelSet, dict[tuple[str, str], float]]:
    """Build a planted collection with known per-item utility gains.

    Each query's target is a stub token plus one answer token per useful
    item. Useful items carry their answer token as payload, distractors a
    junk token, neutral items nothing. Under the synthetic generator and a
    token-overlap utility metric, single-item gains are strictly positive
    for useful items, strictly negative for distractors, and exactly zero
    for neutral items; the returned gain map records those planted signs.

    Planted retrieval scores (retriever name ``planted``) put useful items
    ``score_gap`` above plain distractors; hard negatives sit above the
    useful band.
    """
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.n_range
    queries: list[Query] = []
    gains: dict[tuple[str, str], float] = {}
    entries: dict[tuple[str, str], LabelEntry] = {}
    planted: dict[str, dict[str, float]] = {}

    for qi in range(spec.query_count):
        qid = f"q{qi:04d}"
        n = int(rng.integers(lo, hi + 1))
        m = _round_half_up(spec.pct_useful * n)
        neutral = min(_round_half_up(spec.pct_neutral * n), n - m)
        distractors = n - m - neutral
        hard = min(spec.hard_negative_count, distractors)

        items: list[Item] = []
        answer_tokens: list[str] = []
        base_scores: list[float] = []
        item_gains: list[float] = []
        for j in range(m):
            token = _ANSWER.format(qid=qid, j=j)
            answer_tokens.append(token)
            items.append(
                Item(
                    item_id=f"{qid}-u{j}",
                    text=f"useful evidence for {qid}: {token}",
                    provider_id=f"prov{j % 5}",
                )
            )
            base_scores.append(spec.score_gap)
            item_gains.append(1.0)
        for j in range(distractors):
            token = _JUNK.format(qid=qid, j=j)
            items.append(
                Item(
                    item_id=f"{qid}-d{j}",
                    text=f"distracting content for {qid}: {token}",
                    provider_id=f"prov{j % 5}",
                )
            )
            # the first `hard` distractors outscore the useful band
            base_scores.append(
                spec.score_gap * (1.0 + spec.hard_negative_boost) if j < hard else 0.0
            )
            item_gains.append(-1.0)
        for j in range(neutral):
            items.append(
                Item(
                    item_id=f"{qid}-n{j}",
                    text=f"filler text for {qid} with no payload",
                    provider_id=f"prov{j % 5}",
                )
            )
            base_scores.append(0.0)
            item_gains.append(0.0)

        order = rng.permutation(n)
        items = [items[i] for i in order]
        base = np.asarray(base_scores)[order]
        planted_gain = [item_gains[i] for i in order]
        scores = base + spec.noise * rng.standard_normal(n)

        stub = _STUB.format(qid=qid)
        query = Query(
            query_id=qid,
            input_text=f"synthetic question {qid} {stub}",
            target_output=" ".join(sorted([stub] + answer_tokens)),
            corpus=tuple(items),
        )
        queries.append(query)
        planted[qid] = {
            item.item_id: float(s) for item, s in zip(items, scores)
        }
        for item, gain in zip(items, planted_gain):
            key = (qid, item.item_id)
            gains[key] = gain
            entries[key] = LabelEntry(label=1 if gain > 0 else 0, gain=gain)

    labels = UtilityLabelSet(entries=entries)
    collection = TestCollection(
        queries=tuple(queries),
        inline_labels=labels,
        inline_scores={PLANTED_RETRIEVER: planted},
    )
    return collection, labels, gains
