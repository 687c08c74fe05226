"""Experiment orchestration: alpha sweeps, tradeoff analytics, and reports.

One experiment walks every retained query through scoring, normalization,
temperature-controlled sampling, exposure metrics, generation, and expected
utility, once per temperature. Expected utility is normalized per query by
the maximum utility observed across this invocation's runs plus a dedicated
oracle-retriever run, so the best single sample of a query always scores 1.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .collection import (
    Query,
    TestCollection,
    UtilityLabelSet,
    collection_stats,
    filter_for_fairness,
    load_collection,
    load_label_tsv,
)
from .exposure import compute_ee_metrics
from .generation import (
    CachingGenerator,
    ExternalProcessGenerator,
    PromptTemplate,
    SyntheticGenerator,
    UtilityMetricSpec,
    build_prompt,
    empirical_max_utility,
    expected_utility,
    normalize_eu,
    string_utility,
)
from .retrievers import (
    RankedList,
    ScoreVector,
    bm25_score,
    deterministic_rank,
    load_scores,
    minmax_normalize,
    oracle_permutation,
)
from .sampler import SampleSet, SamplingConfig, sample_set, stream_rng

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunRecord",
    "QueryFailure",
    "ExperimentResult",
    "TradeoffSummary",
    "IntervalRow",
    "IntervalTable",
    "BASELINE_ALPHA",
    "run_experiment",
    "baseline_run",
    "fit_tradeoff_line",
    "curve_auc",
    "make_tradeoff_summary",
    "interval_table",
    "emit_reports",
    "write_runs_csv",
    "read_runs_csv",
]

log = logging.getLogger("fairrag")

# Baseline rows are the deterministic ranking, i.e. the infinite-temperature
# limit of the sampler; they carry alpha = inf in runs.csv.
BASELINE_ALPHA = math.inf

RUNS_CSV_COLUMNS = (
    "query_id",
    "alpha",
    "seed",
    "eed_norm",
    "eer_norm",
    "eu_raw",
    "eu_norm",
    "n",
    "m",
    "k",
    "retriever",
    "generator",
)

INTERVALS = ((0.0, 0.2), (0.2, 0.4), (0.4, 0.6), (0.6, 0.8), (0.8, 1.0))


class ConfigError(ValueError):
    """Invalid experiment configuration; maps to CLI exit code 2."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one invocation of the evaluation pipeline needs."""

    collection: Path
    retriever: str = "bm25"  # bm25 | scores:<name> | oracle
    generator: str = "synthetic"  # synthetic | cmd:<command line>
    metric: str = "token_f1"  # metric name, optionally name:upper_bound
    template_path: Path | None = None
    alphas: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0)
    samples: int = 100
    topk: int = 5
    seed: int = 0
    baseline_mode: bool = False
    out_dir: Path = Path("fairrag-out")
    labels_path: Path | None = None
    scores_path: Path | None = None
    workers: int = 1
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    generator_timeout: float = 60.0
    include_baseline: bool = True
    dump_samples: bool = False

    def validate(self) -> None:
        if not self.alphas:
            raise ConfigError("alphas must be non-empty")
        if any(a < 0 for a in self.alphas):
            raise ConfigError("alphas must be non-negative")
        if len(set(self.alphas)) != len(self.alphas):
            raise ConfigError("alphas must be distinct")
        if self.samples < 1:
            raise ConfigError("samples must be at least 1")
        if self.topk < 1:
            raise ConfigError("topk must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.retriever != "oracle" and self.retriever != "bm25" and not (
            self.retriever.startswith("scores:") and len(self.retriever) > len("scores:")
        ):
            raise ConfigError(
                f"retriever must be bm25, oracle, or scores:<name>, got {self.retriever!r}"
            )
        if self.generator != "synthetic" and not (
            self.generator.startswith("cmd:") and len(self.generator) > len("cmd:")
        ):
            raise ConfigError(
                f"generator must be synthetic or cmd:<command>, got {self.generator!r}"
            )
        try:
            UtilityMetricSpec.parse(self.metric)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def config_hash(self) -> str:
        payload = {k: str(v) for k, v in asdict(self).items()}
        return hashlib.sha256(
            json.dumps(payload, sort_keys=True).encode()
        ).hexdigest()[:16]


@dataclass(frozen=True)
class RunRecord:
    """One evaluated (query, alpha) point of the sweep."""

    query_id: str
    alpha: float
    seed: int
    eed_norm: float
    eer_norm: float
    eu_raw: float
    eu_norm: float
    n: int
    m: int
    k: int
    retriever: str
    generator: str


@dataclass(frozen=True)
class QueryFailure:
    query_id: str
    error: str


@dataclass
class ExperimentResult:
    """Records plus the per-query bookkeeping behind their normalization."""

    records: list[RunRecord]
    baseline_records: list[RunRecord]
    failures: list[QueryFailure]
    u_max: dict[str, float]
    zero_ceiling_queries: list[str]
    # per (query_id, alpha): single-sample utilities, and per query the
    # utilities of the oracle ceiling run
    sample_utilities: dict[tuple[str, float], list[float]] = field(default_factory=dict)
    oracle_utilities: dict[str, list[float]] = field(default_factory=dict)
    sample_sets: list[SampleSet] = field(default_factory=list)
    stats: dict[str, float] | None = None


@dataclass(frozen=True)
class TradeoffSummary:
    """Linear tradeoff fit and binned area under the curve for one axis pair."""

    slope: float
    intercept: float
    auc: float
    point_count: int
    x_name: str
    y_name: str


@dataclass(frozen=True)
class IntervalRow:
    lo: float
    hi: float
    mean_delta_eu: float | None
    run_count: int


@dataclass(frozen=True)
class IntervalTable:
    rows: tuple[IntervalRow, ...]
    baseline_eu: float


def _make_adapter(config: ExperimentConfig) -> CachingGenerator:
    if config.generator == "synthetic":
        return CachingGenerator(SyntheticGenerator())
    command = config.generator[len("cmd:") :]
    return CachingGenerator(
        ExternalProcessGenerator(command, timeout=config.generator_timeout)
    )


def _load_template(config: ExperimentConfig) -> PromptTemplate:
    if config.template_path is None:
        return PromptTemplate()
    text = Path(config.template_path).read_text(encoding="utf-8")
    return PromptTemplate(template=text)


def load_labels(
    config: ExperimentConfig, collection: TestCollection
) -> UtilityLabelSet:
    if config.labels_path is not None:
        return load_label_tsv(config.labels_path)
    if collection.inline_labels is not None:
        return collection.inline_labels
    raise ConfigError(
        "no utility labels: pass --labels or use a collection with inline "
        "labels (produce them with `fairrag label`)"
    )


def _resolve_scores(
    config: ExperimentConfig, collection: TestCollection
) -> dict[str, ScoreVector] | None:
    if config.retriever == "oracle":
        return None
    if config.retriever == "bm25":
        return {
            q.query_id: bm25_score(q, k1=config.bm25_k1, b=config.bm25_b)
            for q in collection.queries
        }
    name = config.retriever[len("scores:") :]
    if config.scores_path is not None:
        return load_scores(config.scores_path, collection, retriever_name=name)
    table = collection.inline_scores.get(name)
    if table is None:
        available = sorted(collection.inline_scores)
        raise ConfigError(
            f"collection has no inline scores named {name!r} "
            f"(available: {available}); pass --scores-file"
        )
    vectors: dict[str, ScoreVector] = {}
    for query in collection.queries:
        row = table.get(query.query_id)
        if row is None or set(row) != set(query.item_ids):
            raise ConfigError(
                f"inline scores {name!r} do not cover query {query.query_id!r}"
            )
        vectors[query.query_id] = ScoreVector(query_id=query.query_id, scores=dict(row))
    return vectors


def _oracle_sample_set(
    query: Query,
    labels: UtilityLabelSet,
    sampling: SamplingConfig,
    purpose: str,
) -> SampleSet:
    rankings = tuple(
        oracle_permutation(
            query,
            labels,
            sampling.truncation_k,
            stream_rng(sampling.seed, query.query_id, sampling.alpha, purpose, stream=i),
        )
        for i in range(sampling.sample_count)
    )
    return SampleSet(query_id=query.query_id, config=sampling, rankings=rankings)


def _deterministic_oracle_ranking(
    query: Query, labels: UtilityLabelSet, k: int
) -> RankedList:
    useful = sorted(
        item.item_id
        for item in query.corpus
        if labels.label(query.query_id, item.item_id) == 1
    )
    other = sorted(
        item.item_id
        for item in query.corpus
        if labels.label(query.query_id, item.item_id) == 0
    )
    ordered = (useful + other)[: min(k, query.n)]
    return RankedList(query_id=query.query_id, ordered_items=tuple(ordered), truncation_k=k)


@dataclass
class _QueryOutcome:
    records: list[RunRecord]
    baseline: RunRecord | None
    u_max: float
    sample_utilities: dict[tuple[str, float], list[float]]
    oracle_utilities: list[float]
    sample_sets: list[SampleSet]


def _evaluate_query(
    query: Query,
    labels: UtilityLabelSet,
    scores: ScoreVector | None,
    config: ExperimentConfig,
    metric: UtilityMetricSpec,
    template: PromptTemplate,
    adapter: CachingGenerator,
) -> _QueryOutcome:
    useful = labels.useful_items(query)
    n, m, k = query.n, len(useful), config.topk
    normalized = minmax_normalize(scores) if scores is not None else None

    def utilities_for(samples: SampleSet) -> list[float]:
        prompts = [build_prompt(query, r, template) for r in samples.rankings]
        outputs = adapter.generate_many(prompts)
        return [string_utility(metric, query.target_output, out) for out in outputs]

    sweep: list[tuple[float, SampleSet, list[float]]] = []
    if not config.baseline_mode:
        for alpha in config.alphas:
            sampling = SamplingConfig(
                alpha=alpha,
                sample_count=config.samples,
                truncation_k=k,
                seed=config.seed,
            )
            if config.retriever == "oracle":
                samples = _oracle_sample_set(query, labels, sampling, "oracle-sweep")
            else:
                samples = sample_set(normalized, sampling)
            sweep.append((alpha, samples, utilities_for(samples)))

    # dedicated oracle run: part of the empirical utility ceiling only
    ceiling_sampling = SamplingConfig(
        alpha=0.0, sample_count=config.samples, truncation_k=k, seed=config.seed
    )
    oracle_samples = _oracle_sample_set(query, labels, ceiling_sampling, "oracle-umax")
    oracle_utils = utilities_for(oracle_samples)

    baseline_samples: SampleSet | None = None
    baseline_utils: list[float] = []
    if config.include_baseline or config.baseline_mode:
        if config.retriever == "oracle":
            ranking = _deterministic_oracle_ranking(query, labels, k)
        else:
            ranking = deterministic_rank(scores, k)
        baseline_samples = SampleSet(
            query_id=query.query_id,
            config=SamplingConfig(
                alpha=BASELINE_ALPHA, sample_count=1, truncation_k=k, seed=config.seed
            ),
            rankings=(ranking,),
        )
        baseline_utils = utilities_for(baseline_samples)

    pool: list[float] = list(oracle_utils)
    for _, _, utils in sweep:
        pool.extend(utils)
    u_max = empirical_max_utility(pool)

    records: list[RunRecord] = []
    sample_utilities: dict[tuple[str, float], list[float]] = {}
    for alpha, samples, utils in sweep:
        ee = compute_ee_metrics(samples, query.item_ids, useful)
        eu_raw = expected_utility(utils)
        records.append(
            RunRecord(
                query_id=query.query_id,
                alpha=alpha,
                seed=config.seed,
                eed_norm=ee.eed_norm,
                eer_norm=ee.eer_norm,
                eu_raw=eu_raw,
                eu_norm=normalize_eu(eu_raw, u_max),
                n=n,
                m=m,
                k=k,
                retriever=config.retriever,
                generator=adapter.name,
            )
        )
        sample_utilities[(query.query_id, alpha)] = utils

    baseline_record = None
    if baseline_samples is not None:
        ee = compute_ee_metrics(baseline_samples, query.item_ids, useful)
        eu_raw = expected_utility(baseline_utils)
        baseline_record = RunRecord(
            query_id=query.query_id,
            alpha=BASELINE_ALPHA,
            seed=config.seed,
            eed_norm=ee.eed_norm,
            eer_norm=ee.eer_norm,
            eu_raw=eu_raw,
            eu_norm=normalize_eu(eu_raw, u_max),
            n=n,
            m=m,
            k=k,
            retriever=config.retriever,
            generator=adapter.name,
        )

    return _QueryOutcome(
        records=records,
        baseline=baseline_record,
        u_max=u_max,
        sample_utilities=sample_utilities,
        oracle_utilities=oracle_utils,
        sample_sets=[samples for _, samples, _ in sweep] if config.dump_samples else [],
    )


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Evaluate every retained query at every temperature.

    Queries evaluate independently (optionally across worker threads, each
    with its own generator adapter); per-query failures are collected
    rather than aborting the sweep. Results are deterministic for a fixed
    configuration and seed regardless of worker count.
    """
    config.validate()
    collection = load_collection(config.collection)
    labels = load_labels(config, collection)
    labels.require_coverage(collection)
    retained = filter_for_fairness(collection, labels)
    if len(retained) == 0:
        raise ConfigError(
            "no queries left after fairness filtering (need at least two useful items)"
        )
    stats = collection_stats(retained, labels)
    score_map = _resolve_scores(config, retained)
    metric = UtilityMetricSpec.parse(config.metric)
    template = _load_template(config)

    local = threading.local()
    adapters: list[CachingGenerator] = []
    adapters_lock = threading.Lock()

    def adapter_for_thread() -> CachingGenerator:
        adapter = getattr(local, "adapter", None)
        if adapter is None:
            adapter = _make_adapter(config)
            with adapters_lock:
                adapters.append(adapter)
            local.adapter = adapter
        return adapter

    def work(query: Query) -> tuple[str, _QueryOutcome | None, str | None]:
        try:
            scores = score_map[query.query_id] if score_map is not None else None
            outcome = _evaluate_query(
                query, labels, scores, config, metric, template, adapter_for_thread()
            )
            return query.query_id, outcome, None
        except Exception as exc:  # noqa: BLE001 - per-query isolation is the contract
            log.exception("query %s failed", query.query_id)
            return query.query_id, None, f"{type(exc).__name__}: {exc}"

    try:
        if config.workers == 1:
            outcomes = [work(q) for q in retained.queries]
        else:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                outcomes = list(pool.map(work, retained.queries))
    finally:
        for adapter in adapters:
            adapter.close()

    result = ExperimentResult(
        records=[],
        baseline_records=[],
        failures=[],
        u_max={},
        zero_ceiling_queries=[],
        stats=asdict(stats),
    )
    for query_id, outcome, error in outcomes:
        if outcome is None:
            result.failures.append(QueryFailure(query_id=query_id, error=error))
            continue
        result.records.extend(outcome.records)
        if outcome.baseline is not None:
            result.baseline_records.append(outcome.baseline)
        result.u_max[query_id] = outcome.u_max
        if outcome.u_max == 0.0:
            result.zero_ceiling_queries.append(query_id)
        result.sample_utilities.update(outcome.sample_utilities)
        result.oracle_utilities[query_id] = outcome.oracle_utilities
        result.sample_sets.extend(outcome.sample_sets)

    result.records.sort(key=lambda r: (r.query_id, r.alpha))
    result.baseline_records.sort(key=lambda r: r.query_id)
    result.failures.sort(key=lambda f: f.query_id)
    result.sample_sets.sort(key=lambda s: (s.query_id, s.config.alpha))
    return result


def baseline_run(config: ExperimentConfig) -> ExperimentResult:
    """Deterministic-ranking run only: one record per query, eed_norm = 1."""
    return run_experiment(replace(config, baseline_mode=True, include_baseline=True))


def fit_tradeoff_line(points: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Ordinary least squares line through the points: (slope, intercept)."""
    if len(points) < 2:
        raise ValueError("need at least two points to fit a line")
    xs = np.array([p[0] for p in points], dtype=float)
    ys = np.array([p[1] for p in points], dtype=float)
    if np.ptp(xs) == 0.0:
        raise ValueError("degenerate fit: all x values identical")
    slope, intercept = np.polyfit(xs, ys, 1)
    return float(slope), float(intercept)


def curve_auc(points: Sequence[tuple[float, float]], n_bins: int = 20) -> float:
    """Area under the binned mean curve over x in [0, 1].

    Points are bucketed into equal-width bins, each non-empty bin
    contributes its mean y at the bin center, the first and last means
    extend flat to the 0 and 1 edges, and the polyline is integrated by
    trapezoid.
    """
    if len(points) < 2:
        raise ValueError("need at least two points")
    sums = np.zeros(n_bins)
    counts = np.zeros(n_bins, dtype=int)
    for x, y in points:
        if not (0.0 <= x <= 1.0):
            raise ValueError(f"x={x} outside [0, 1]; AUC expects normalized metrics")
        index = min(int(x * n_bins), n_bins - 1)
        sums[index] += y
        counts[index] += 1
    occupied = np.nonzero(counts)[0]
    if len(occupied) < 2:
        raise ValueError("all points fall in one bin; AUC undefined")
    centers = (occupied + 0.5) / n_bins
    means = sums[occupied] / counts[occupied]
    xs = np.concatenate(([0.0], centers, [1.0]))
    ys = np.concatenate(([means[0]], means, [means[-1]]))
    return float(np.sum((ys[1:] + ys[:-1]) / 2.0 * np.diff(xs)))


def make_tradeoff_summary(
    points: Sequence[tuple[float, float]], x_name: str, y_name: str
) -> TradeoffSummary:
    slope, intercept = fit_tradeoff_line(points)
    return TradeoffSummary(
        slope=slope,
        intercept=intercept,
        auc=curve_auc(points),
        point_count=len(points),
        x_name=x_name,
        y_name=y_name,
    )


def interval_table(
    records: Sequence[RunRecord], baseline_records: Sequence[RunRecord]
) -> IntervalTable:
    """Mean utility delta against the per-query baseline, per fairness interval.

    Each sweep record lands in the interval containing its normalized
    disparity; records at exactly 1.0 belong to the deterministic regime
    and are excluded. The delta is the record's normalized expected
    utility minus its query's baseline value.
    """
    baseline_by_query = {r.query_id: r.eu_norm for r in baseline_records}
    missing = {r.query_id for r in records} - set(baseline_by_query)
    if missing:
        raise ValueError(f"no baseline record for queries: {sorted(missing)}")
    deltas: list[list[float]] = [[] for _ in INTERVALS]
    for record in records:
        if record.eed_norm >= 1.0:
            continue
        index = min(int(record.eed_norm / 0.2), len(INTERVALS) - 1)
        deltas[index].append(record.eu_norm - baseline_by_query[record.query_id])
    rows = tuple(
        IntervalRow(
            lo=lo,
            hi=hi,
            mean_delta_eu=(sum(bucket) / len(bucket)) if bucket else None,
            run_count=len(bucket),
        )
        for (lo, hi), bucket in zip(INTERVALS, deltas)
    )
    baseline_eu = (
        sum(baseline_by_query.values()) / len(baseline_by_query)
        if baseline_by_query
        else math.nan
    )
    return IntervalTable(rows=rows, baseline_eu=baseline_eu)


def write_runs_csv(records: Iterable[RunRecord], path: str | Path) -> None:
    """Fixed-column CSV, one record per row; floats round-trip exactly."""
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(RUNS_CSV_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.query_id,
                    repr(r.alpha) if math.isfinite(r.alpha) else "inf",
                    r.seed,
                    repr(r.eed_norm),
                    repr(r.eer_norm),
                    repr(r.eu_raw),
                    repr(r.eu_norm),
                    r.n,
                    r.m,
                    r.k,
                    r.retriever,
                    r.generator,
                ]
            )


def read_runs_csv(path: str | Path) -> list[RunRecord]:
    records = []
    with Path(path).open("r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != list(RUNS_CSV_COLUMNS):
            raise ValueError(f"{path}: unexpected runs.csv header {header}")
        for row in reader:
            records.append(
                RunRecord(
                    query_id=row[0],
                    alpha=float(row[1]),
                    seed=int(row[2]),
                    eed_norm=float(row[3]),
                    eer_norm=float(row[4]),
                    eu_raw=float(row[5]),
                    eu_norm=float(row[6]),
                    n=int(row[7]),
                    m=int(row[8]),
                    k=int(row[9]),
                    retriever=row[10],
                    generator=row[11],
                )
            )
    return records


AXIS_PAIRS = (
    ("eed_norm", "eer_norm"),
    ("eer_norm", "eu_norm"),
    ("eed_norm", "eu_norm"),
)

AUC_METHOD = (
    "20 equal-width bins over [0,1] on x, per-bin mean of y, bin-center "
    "polyline extended flat to the 0 and 1 edges, trapezoid integration"
)
U_MAX_SCOPE = (
    "per query: max single-sample utility over all runs of this invocation "
    "plus one oracle-retriever run"
)


def compute_axis_summaries(
    records: Sequence[RunRecord],
) -> dict[str, TradeoffSummary | str]:
    """Tradeoff summaries for the three standard axis pairs.

    Pairs that cannot be summarized (too few points, degenerate spread)
    report the reason instead of a summary.
    """
    summaries: dict[str, TradeoffSummary | str] = {}
    for x_name, y_name in AXIS_PAIRS:
        key = f"{x_name}_vs_{y_name}"
        points = [(getattr(r, x_name), getattr(r, y_name)) for r in records]
        try:
            summaries[key] = make_tradeoff_summary(points, x_name, y_name)
        except ValueError as exc:
            summaries[key] = f"unavailable: {exc}"
    return summaries


def _binned_curve(
    points: Sequence[tuple[float, float]], n_bins: int = 20
) -> list[tuple[float, float]]:
    sums = np.zeros(n_bins)
    counts = np.zeros(n_bins, dtype=int)
    for x, y in points:
        index = min(int(x * n_bins), n_bins - 1)
        sums[index] += y
        counts[index] += 1
    occupied = np.nonzero(counts)[0]
    return [
        (float((i + 0.5) / n_bins), float(sums[i] / counts[i])) for i in occupied
    ]


def _write_tsv(path: Path, header: tuple[str, str], rows: Iterable[tuple[float, float]]) -> None:
    with path.open("w", encoding="utf-8") as handle:
        handle.write(f"{header[0]}\t{header[1]}\n")
        for x, y in rows:
            handle.write(f"{x!r}\t{y!r}\n")


def emit_reports(
    records: Sequence[RunRecord],
    baseline_records: Sequence[RunRecord],
    summaries: dict[str, TradeoffSummary | str],
    table: IntervalTable | None,
    out_dir: str | Path,
    provenance: dict | None = None,
    failures: Sequence[QueryFailure] = (),
    zero_ceiling_queries: Sequence[str] = (),
    stats: dict | None = None,
) -> dict[str, Path]:
    """Write runs.csv, summary.json, intervals.csv, and plotdata/*.tsv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    plot_dir = out_dir / "plotdata"
    plot_dir.mkdir(exist_ok=True)
    written: dict[str, Path] = {}

    runs_path = out_dir / "runs.csv"
    ordered = sorted(
        list(records) + list(baseline_records), key=lambda r: (r.query_id, r.alpha)
    )
    write_runs_csv(ordered, runs_path)
    written["runs"] = runs_path

    intervals_path = out_dir / "intervals.csv"
    with intervals_path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["interval_lo", "interval_hi", "mean_delta_eu", "run_count"])
        if table is not None:
            for row in table.rows:
                writer.writerow(
                    [
                        row.lo,
                        row.hi,
                        "" if row.mean_delta_eu is None else repr(row.mean_delta_eu),
                        row.run_count,
                    ]
                )
    written["intervals"] = intervals_path

    summary = {
        "pairs": {
            key: (asdict(value) if isinstance(value, TradeoffSummary) else value)
            for key, value in summaries.items()
        },
        "auc_method": AUC_METHOD,
        "u_max_scope": U_MAX_SCOPE,
        "record_count": len(records),
        "baseline_count": len(baseline_records),
        "baseline_eu": None if table is None else table.baseline_eu,
        "intervals": None
        if table is None
        else [asdict(row) for row in table.rows],
        "failures": [asdict(f) for f in failures],
        "zero_ceiling_queries": list(zero_ceiling_queries),
        "collection_stats": stats,
        "provenance": provenance or {},
    }
    summary_path = out_dir / "summary.json"
    summary_path.write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    written["summary"] = summary_path

    finite = [r for r in records if math.isfinite(r.alpha)]
    for x_name, y_name in AXIS_PAIRS:
        stem = f"{x_name}_vs_{y_name}".replace("_norm", "")
        points = [(getattr(r, x_name), getattr(r, y_name)) for r in finite]
        _write_tsv(plot_dir / f"{stem}.tsv", (x_name, y_name), points)
        curve = _binned_curve(points) if points else []
        _write_tsv(plot_dir / f"{stem}_curve.tsv", (x_name, y_name), curve)
    for metric_name in ("eed_norm", "eer_norm", "eu_norm"):
        rows = [(r.alpha, getattr(r, metric_name)) for r in finite]
        _write_tsv(
            plot_dir / f"alpha_vs_{metric_name.replace('_norm', '')}.tsv",
            ("alpha", metric_name),
            rows,
        )
    written["plotdata"] = plot_dir

    if failures:
        failures_path = out_dir / "failures.json"
        failures_path.write_text(
            json.dumps([asdict(f) for f in failures], indent=2) + "\n",
            encoding="utf-8",
        )
        written["failures"] = failures_path
    return written
