"""Fairness-aware stochastic ranking and evaluation for RAG pipelines."""

from .collection import (
    CollectionStats,
    Item,
    Query,
    SyntheticSpec,
    TestCollection,
    UtilityLabelSet,
    collection_stats,
    filter_for_fairness,
    generate_synthetic,
    load_collection,
)
from .exposure import (
    EEMetrics,
    ExposureVector,
    compute_ee_metrics,
    exact_exposure,
    machine_user_attention,
    normalize_eed,
    normalize_eer,
    system_exposure,
    target_exposure,
)
from .generation import (
    ExternalProcessGenerator,
    PromptTemplate,
    SyntheticGenerator,
    UtilityMetricSpec,
    expected_utility,
    label_utilities,
    normalize_eu,
    string_utility,
)
from .harness import (
    ExperimentConfig,
    RunRecord,
    baseline_run,
    curve_auc,
    emit_reports,
    fit_tradeoff_line,
    interval_table,
    run_experiment,
)
from .retrievers import (
    NormalizedScoreVector,
    RankedList,
    ScoreVector,
    bm25_score,
    deterministic_rank,
    minmax_normalize,
    oracle_permutation,
)
from .sampler import (
    SampleSet,
    SamplingConfig,
    apply_temperature,
    pl_sample_gumbel,
    pl_sample_sequential,
    ranking_probability,
    sample_set,
)

__version__ = "0.1.0"
