"""Temperature-controlled Plackett-Luce ranking sampler.

Sampling weights are exp(v) of tempered scores v = s^alpha, where s is a
min-max normalized score in [1, 2]. The production path perturbs tempered
scores with Gumbel noise and sorts; a position-by-position sequential
sampler and an exact probability evaluator exist as independent oracles.

Randomness is counter-based: every sample index owns a Philox stream keyed
by (seed, query_id, alpha, purpose), so results do not depend on evaluation
order or parallel scheduling.
"""

from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass
from hashlib import blake2b
from pathlib import Path

import numpy as np

from .retrievers import NormalizedScoreVector, RankedList

__all__ = [
    "SamplingConfig",
    "TemperedScores",
    "SampleSet",
    "apply_temperature",
    "pl_sample_gumbel",
    "pl_sample_sequential",
    "sample_set",
    "ranking_probability",
    "stream_rng",
    "dump_sample_set",
]

_LOG_FLOAT_MAX = math.log(sys.float_info.max)


@dataclass(frozen=True)
class SamplingConfig:
    """Temperature, sample count, truncation, and master seed for one sweep point."""

    alpha: float
    sample_count: int
    truncation_k: int
    seed: int

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.sample_count < 1:
            raise ValueError("sample_count must be at least 1")
        if self.truncation_k < 1:
            raise ValueError("truncation_k must be at least 1")


@dataclass(frozen=True, eq=False)
class TemperedScores:
    """Score vector after temperature exponentiation, in fixed item order."""

    query_id: str
    item_ids: tuple[str, ...]
    values: np.ndarray

    @property
    def n(self) -> int:
        return len(self.item_ids)


@dataclass(frozen=True, eq=False)
class SampleSet:
    """N sampled rankings for one query under one sampling configuration."""

    query_id: str
    config: SamplingConfig
    rankings: tuple[RankedList, ...]

    def __post_init__(self) -> None:
        if len(self.rankings) != self.config.sample_count:
            raise ValueError(
                f"expected {self.config.sample_count} rankings, got {len(self.rankings)}"
            )


def stream_rng(seed: int, *context: object, stream: int = 0) -> np.random.Generator:
    """Philox generator for one (seed, context...) stream.

    The key is a stable 128-bit hash of the seed and the context parts;
    ``stream`` selects a disjoint counter block, so distinct sample indices
    draw from independent, order-insensitive streams.
    """
    digest = blake2b(digest_size=16)
    digest.update(repr(int(seed)).encode())
    for part in context:
        digest.update(b"\x1f")
        digest.update(repr(part).encode())
    key = int.from_bytes(digest.digest(), "big")
    return np.random.Generator(np.random.Philox(key=key, counter=stream << 128))


def apply_temperature(scores: NormalizedScoreVector, alpha: float) -> TemperedScores:
    """Raise each normalized score to the power alpha.

    alpha = 0 collapses every score to 1 (uniform sampling downstream);
    alpha = 1 is the identity. Alphas so large that 2^alpha overflows the
    float range are rejected.
    """
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    if alpha * math.log(2.0) > _LOG_FLOAT_MAX:
        raise OverflowError(f"alpha={alpha} overflows tempered scores (2^alpha = inf)")
    item_ids = tuple(sorted(scores.scores))
    values = np.array([scores.scores[iid] for iid in item_ids], dtype=float) ** alpha
    return TemperedScores(query_id=scores.query_id, item_ids=item_ids, values=values)


def _gumbel(rng: np.random.Generator, size: int) -> np.ndarray:
    # G = -log(-log U); redraw U at the interval edges to keep G finite
    u = rng.random(size)
    bad = (u <= 0.0) | (u >= 1.0)
    while bad.any():
        u[bad] = rng.random(int(bad.sum()))
        bad = (u <= 0.0) | (u >= 1.0)
    return -np.log(-np.log(u))


def pl_sample_gumbel(
    tempered: TemperedScores, k: int, rng: np.random.Generator
) -> RankedList:
    """Sample one ranking by sorting Gumbel-perturbed tempered scores.

    Equivalent in distribution to the sequential sampler, at the cost of a
    single sort.
    """
    n = tempered.n
    perturbed = tempered.values + _gumbel(rng, n)
    cutoff = min(k, n)
    order = np.argsort(-perturbed, kind="stable")[:cutoff]
    return RankedList(
        query_id=tempered.query_id,
        ordered_items=tuple(tempered.item_ids[i] for i in order),
        truncation_k=k,
    )


def pl_sample_sequential(
    tempered: TemperedScores, k: int, rng: np.random.Generator
) -> RankedList:
    """Sample one ranking position by position.

    Each position is a softmax draw over the remaining items with weights
    exp(tempered score); drawn items leave the pool. Serves as the
    independent oracle for the Gumbel path.
    """
    n = tempered.n
    cutoff = min(k, n)
    remaining = list(range(n))
    chosen: list[int] = []
    for _ in range(cutoff):
        values = tempered.values[remaining]
        weights = np.exp(values - values.max())
        cumulative = np.cumsum(weights)
        draw = rng.random() * cumulative[-1]
        index = int(np.searchsorted(cumulative, draw, side="right"))
        index = min(index, len(remaining) - 1)
        chosen.append(remaining.pop(index))
    return RankedList(
        query_id=tempered.query_id,
        ordered_items=tuple(tempered.item_ids[i] for i in chosen),
        truncation_k=k,
    )


def sample_set(scores: NormalizedScoreVector, config: SamplingConfig) -> SampleSet:
    """Draw N independent rankings via the Gumbel sampler.

    Sample index i uses the stream (seed, query_id, alpha, "pl")[i], so a
    sample set is reproducible regardless of how the draws are scheduled.
    """
    tempered = apply_temperature(scores, config.alpha)
    rankings = []
    for i in range(config.sample_count):
        rng = stream_rng(config.seed, scores.query_id, config.alpha, "pl", stream=i)
        rankings.append(pl_sample_gumbel(tempered, config.truncation_k, rng))
    return SampleSet(
        query_id=scores.query_id, config=config, rankings=tuple(rankings)
    )


def ranking_probability(tempered: TemperedScores, ranking: RankedList) -> float:
    """Exact Plackett-Luce probability of a (possibly truncated) ranking.

    Product over positions of exp(score) normalized over the items still in
    the pool; computed with max-subtraction for stability.
    """
    index = {iid: i for i, iid in enumerate(tempered.item_ids)}
    for iid in ranking.ordered_items:
        if iid not in index:
            raise ValueError(f"ranking item {iid!r} not in score vector")
    remaining = np.ones(tempered.n, dtype=bool)
    probability = 1.0
    for iid in ranking.ordered_items:
        values = tempered.values[remaining]
        shift = values.max()
        weights = np.exp(values - shift)
        probability *= math.exp(tempered.values[index[iid]] - shift) / weights.sum()
        remaining[index[iid]] = False
    return probability


def dump_sample_set(samples: SampleSet, path: str | Path, append: bool = False) -> None:
    """Write one JSON line per sampled ranking for audit or replay."""
    mode = "a" if append else "w"
    with Path(path).open(mode, encoding="utf-8") as handle:
        for i, ranking in enumerate(samples.rankings):
            handle.write(
                json.dumps(
                    {
                        "query_id": samples.query_id,
                        "alpha": samples.config.alpha,
                        "sample_index": i,
                        "ranking": list(ranking.ordered_items),
                    }
                )
                + "\n"
            )
