"""Expected exposure under the machine-user browsing model.

The machine user gives one unit of attention to every item inside the
top-k truncation and none below it. System exposure is the per-item
attention averaged over a set of sampled rankings; target exposure is the
attention allocated by an oracle that always ranks useful items first,
averaged over all optimal permutations.

Disparity is the squared norm of the system exposure vector, relevance the
inner product of system and target exposure. Both are normalized per query
by their attainable bounds: disparity by the effective truncation depth,
relevance by the squared norm of the target vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations
from typing import Iterable, Mapping, Sequence

import numpy as np

from .sampler import SampleSet, TemperedScores

__all__ = [
    "ExposureVector",
    "EEMetrics",
    "CorpusTooLargeError",
    "machine_user_attention",
    "exposure_counts",
    "system_exposure",
    "exact_exposure",
    "target_exposure",
    "target_exposure_vector",
    "ee_disparity",
    "ee_relevance",
    "normalize_eed",
    "normalize_eer",
    "compute_ee_metrics",
]

ENUMERATION_LIMIT = 8
_BOUND_SLACK = 1e-9


class CorpusTooLargeError(ValueError):
    """Exact enumeration requested beyond the tractable corpus size."""


@dataclass(frozen=True)
class ExposureVector:
    """Per-item expected attention mass, each entry in [0, 1]."""

    query_id: str
    exposure: Mapping[str, float]

    def __post_init__(self) -> None:
        for item_id, value in self.exposure.items():
            if not (-_BOUND_SLACK <= value <= 1.0 + _BOUND_SLACK):
                raise ValueError(
                    f"query {self.query_id!r}: exposure for {item_id!r} "
                    f"outside [0, 1]: {value}"
                )

    def values(self, item_ids: Sequence[str]) -> np.ndarray:
        return np.array([self.exposure[iid] for iid in item_ids], dtype=float)


@dataclass(frozen=True)
class EEMetrics:
    """Raw and normalized expected-exposure disparity and relevance."""

    eed_raw: float
    eer_raw: float
    eed_norm: float
    eer_norm: float
    n: int
    m: int
    k: int


def machine_user_attention(position: int, k: int) -> int:
    """Step attention: 1 for ranks up to k, 0 past the truncation."""
    if position < 1:
        raise ValueError("position is 1-based")
    return 1 if position <= k else 0


def exposure_counts(samples: SampleSet, item_ids: Iterable[str]) -> dict[str, int]:
    """Integer attention counts per item over the sampled rankings.

    Exact by construction: the counts of one ranking sum to min(k, n), so
    the total is N * min(k, n) before any division.
    """
    counts = {iid: 0 for iid in item_ids}
    k = samples.config.truncation_k
    for ranking in samples.rankings:
        for position, item_id in enumerate(ranking.ordered_items, start=1):
            counts[item_id] += machine_user_attention(position, k)
    return counts


def system_exposure(samples: SampleSet, item_ids: Iterable[str]) -> ExposureVector:
    """Monte-Carlo estimate of per-item exposure: attention counts over N."""
    counts = exposure_counts(samples, item_ids)
    n_samples = samples.config.sample_count
    return ExposureVector(
        query_id=samples.query_id,
        exposure={iid: count / n_samples for iid, count in counts.items()},
    )


def exact_exposure(tempered: TemperedScores, k: int) -> ExposureVector:
    """Exposure under the exact sampling distribution, by enumeration.

    Testing oracle: sums ranking probability times attention over every
    truncated ranking. Equal tempered scores short-circuit to the symmetric
    closed form min(k, n) / n for any corpus size; otherwise the corpus
    must stay within the enumeration guard.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    n = tempered.n
    cutoff = min(k, n)
    values = tempered.values
    if np.all(values == values[0]):
        uniform = cutoff / n
        return ExposureVector(
            query_id=tempered.query_id,
            exposure={iid: uniform for iid in tempered.item_ids},
        )
    if n > ENUMERATION_LIMIT:
        raise CorpusTooLargeError(
            f"exact exposure needs n <= {ENUMERATION_LIMIT} for distinct scores, got {n}"
        )
    weights = np.exp(values - values.max())
    exposure = np.zeros(n)
    for prefix in permutations(range(n), cutoff):
        remaining = weights.sum()
        probability = 1.0
        for index in prefix:
            probability *= weights[index] / remaining
            remaining -= weights[index]
        for index in prefix:
            exposure[index] += probability
    return ExposureVector(
        query_id=tempered.query_id,
        exposure={iid: float(exposure[i]) for i, iid in enumerate(tempered.item_ids)},
    )


def target_exposure(m: int, n: int, k: int) -> tuple[float, float]:
    """Oracle exposure for a useful and a non-useful item.

    With effective depth k' = min(k, n): useful items get full attention
    when they all fit (m <= k'), sharing k' slots otherwise; non-useful
    items split the k' - m leftover slots when any exist.
    """
    if not (1 <= m <= n):
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    if k < 1:
        raise ValueError("k must be at least 1")
    cutoff = min(k, n)
    if m <= cutoff:
        useful = 1.0
        non_useful = (cutoff - m) / (n - m) if n > m else 0.0
    else:
        useful = cutoff / m
        non_useful = 0.0
    return useful, non_useful


def target_exposure_vector(
    query_id: str, item_ids: Sequence[str], useful_ids: Iterable[str], k: int
) -> ExposureVector:
    """Assemble the per-item target exposure vector from the two-level formula."""
    useful_set = set(useful_ids)
    unknown = useful_set - set(item_ids)
    if unknown:
        raise ValueError(f"useful ids not in corpus: {sorted(unknown)}")
    useful_value, other_value = target_exposure(len(useful_set), len(item_ids), k)
    return ExposureVector(
        query_id=query_id,
        exposure={
            iid: (useful_value if iid in useful_set else other_value)
            for iid in item_ids
        },
    )


def ee_disparity(epsilon: ExposureVector) -> float:
    """Squared norm of the exposure vector; higher means more unequal."""
    values = np.fromiter(epsilon.exposure.values(), dtype=float)
    return float(values @ values)


def ee_relevance(epsilon: ExposureVector, target: ExposureVector) -> float:
    """Inner product of system and target exposure over a shared support."""
    if set(epsilon.exposure) != set(target.exposure):
        raise ValueError("system and target exposure cover different items")
    return float(
        sum(value * target.exposure[iid] for iid, value in epsilon.exposure.items())
    )


def normalize_eed(eed_raw: float, k: int) -> float:
    """Disparity over its upper bound k (the effective truncation depth).

    ``k`` must already be the effective depth min(k, n). Values outside
    [0, k] beyond floating-point slack signal an exposure bug and raise.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if eed_raw < -_BOUND_SLACK or eed_raw > k + _BOUND_SLACK:
        raise ValueError(f"eed_raw={eed_raw} outside [0, {k}]")
    return min(1.0, max(0.0, eed_raw / k))


def normalize_eer(eer_raw: float, n: int, m: int, k: int) -> float:
    """Relevance over the squared norm of the target exposure vector.

    The bound is m + (k'-m)^2/(n-m) when the useful items fit in the
    effective depth k' = min(k, n) (just m when n = m), and k'^2/m
    otherwise. Clamped into [0, 1].
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    if not (m <= n):
        raise ValueError(f"need m <= n, got m={m}, n={n}")
    cutoff = min(k, n)
    if m <= cutoff:
        bound = float(m)
        if n > m:
            bound += (cutoff - m) ** 2 / (n - m)
    else:
        bound = cutoff**2 / m
    return min(1.0, max(0.0, eer_raw / bound))


def compute_ee_metrics(
    samples: SampleSet, item_ids: Sequence[str], useful_ids: Iterable[str]
) -> EEMetrics:
    """System exposure, target exposure, and both normalized metrics in one pass."""
    useful = tuple(useful_ids)
    n = len(item_ids)
    k = samples.config.truncation_k
    epsilon = system_exposure(samples, item_ids)
    target = target_exposure_vector(samples.query_id, item_ids, useful, k)
    eed_raw = ee_disparity(epsilon)
    eer_raw = ee_relevance(epsilon, target)
    return EEMetrics(
        eed_raw=eed_raw,
        eer_raw=eer_raw,
        eed_norm=normalize_eed(eed_raw, min(k, n)),
        eer_norm=normalize_eer(eer_raw, n, len(useful), k),
        n=n,
        m=len(useful),
        k=k,
    )
