"""Acceptance suite: one test and one printed pass/fail line per criterion."""

import time
from itertools import permutations

import numpy as np
from scipy import stats

from fairrag.cli import main as cli_main
from fairrag.collection import (
    SyntheticSpec,
    generate_synthetic,
    save_collection,
)
from fairrag.exposure import (
    ExposureVector,
    compute_ee_metrics,
    ee_disparity,
    ee_relevance,
    exact_exposure,
    exposure_counts,
    normalize_eed,
    target_exposure,
    target_exposure_vector,
)
from fairrag.generation import (
    PromptTemplate,
    SyntheticGenerator,
    UtilityMetricSpec,
    label_utilities,
    normalize_eu,
)
from fairrag.harness import (
    ExperimentConfig,
    compute_axis_summaries,
    interval_table,
    run_experiment,
)
from fairrag.retrievers import NormalizedScoreVector, RankedList, minmax_normalize, ScoreVector
from fairrag.sampler import (
    SampleSet,
    SamplingConfig,
    TemperedScores,
    apply_temperature,
    pl_sample_gumbel,
    pl_sample_sequential,
    ranking_probability,
    sample_set,
    stream_rng,
)


def _report(number: int, description: str, ok: bool, detail: str = "") -> None:
    line = f"[criterion {number:02d}] {'PASS' if ok else 'FAIL'}: {description}"
    if detail:
        line += f" ({detail})"
    print(line)
    assert ok, line


def _tempered(values, query_id="q"):
    ids = tuple(f"i{j}" for j in range(len(values)))
    return TemperedScores(
        query_id=query_id, item_ids=ids, values=np.array(values, dtype=float)
    )


def _sample_set_from(rankings, k, alpha=1.0, seed=0):
    config = SamplingConfig(
        alpha=alpha, sample_count=len(rankings), truncation_k=k, seed=seed
    )
    return SampleSet(query_id="q", config=config, rankings=tuple(rankings))


def _planted_collection_file(tmp_path, name="collection.jsonl", **overrides):
    kwargs = dict(
        query_count=20,
        n_range=(22, 28),
        pct_useful=0.4,
        score_gap=1.0,
        noise=0.05,
        seed=42,
        hard_negative_count=3,
        hard_negative_boost=0.1,
    )
    kwargs.update(overrides)
    collection, labels, gains = generate_synthetic(SyntheticSpec(**kwargs))
    path = tmp_path / name
    save_collection(collection, path)
    return path, collection, labels, gains


def test_c01_sampler_distribution_matches_exact_probabilities():
    started = time.monotonic()
    draws = 200_000
    nsv = NormalizedScoreVector(
        "q", {"i0": 1.0, "i1": 1.35, "i2": 1.7, "i3": 2.0}
    )
    tempered = apply_temperature(nsv, 2.0)
    perms = list(permutations(tempered.item_ids, 4))
    exact = np.array(
        [
            ranking_probability(tempered, RankedList("q", p, truncation_k=4))
            for p in perms
        ]
    )
    index = {p: i for i, p in enumerate(perms)}

    def empirical(sampler, seed):
        counts = np.zeros(len(perms))
        rng = stream_rng(seed, "c01")
        for _ in range(draws):
            counts[index[sampler(tempered, 4, rng).ordered_items]] += 1
        return counts

    gumbel_counts = empirical(pl_sample_gumbel, 101)
    sequential_counts = empirical(pl_sample_sequential, 102)

    tv = 0.5 * float(np.abs(gumbel_counts / draws - exact).sum())
    gumbel_p = stats.chisquare(gumbel_counts, f_exp=exact * draws).pvalue
    sequential_p = stats.chisquare(sequential_counts, f_exp=exact * draws).pvalue
    elapsed = time.monotonic() - started

    ok = tv < 0.01 and gumbel_p > 0.001 and sequential_p > 0.001 and elapsed < 30.0
    _report(
        1,
        "Gumbel sampler matches exact ranking probabilities and sequential sampler",
        ok,
        f"TV={tv:.4f}, chi2 p gumbel={gumbel_p:.3f} sequential={sequential_p:.3f}, "
        f"{elapsed:.1f}s",
    )


def test_c02_probability_closure_over_truncated_rankings():
    rng = np.random.default_rng(7)
    worst = 0.0
    for n in range(1, 7):
        for k in range(1, n + 1):
            for style in range(3):
                if style == 0:
                    values = rng.uniform(1.0, 2.0, n) ** rng.uniform(0.0, 8.0)
                elif style == 1:
                    values = np.linspace(1.0, 2.0, n) ** 8.0
                else:
                    values = np.ones(n)
                    values[0] = 2.0**6
                tempered = _tempered(list(values))
                total = sum(
                    ranking_probability(
                        tempered, RankedList("q", prefix, truncation_k=k)
                    )
                    for prefix in permutations(tempered.item_ids, k)
                )
                worst = max(worst, abs(total - 1.0))
    _report(
        2,
        "ranking probabilities sum to 1 over all truncated rankings (n <= 6)",
        worst <= 1e-12,
        f"max |sum - 1| = {worst:.2e}",
    )


def test_c03_exposure_conservation_fuzz():
    rng = np.random.default_rng(11)
    failures = 0
    for case in range(1000):
        n = int(rng.integers(1, 11))
        k = int(rng.integers(1, 13))
        n_samples = int(rng.integers(1, 41))
        alpha = float(rng.uniform(0.0, 8.0))
        nsv = NormalizedScoreVector(
            "q", {f"i{j}": float(v) for j, v in enumerate(rng.uniform(1, 2, n))}
        )
        config = SamplingConfig(
            alpha=alpha, sample_count=n_samples, truncation_k=k, seed=case
        )
        samples = sample_set(nsv, config)
        counts = exposure_counts(samples, nsv.scores.keys())
        if sum(counts.values()) != n_samples * min(k, n):
            failures += 1
    _report(
        3,
        "system exposure counts sum to N * min(k, n) exactly (1000-case fuzz)",
        failures == 0,
        f"{failures} violations",
    )


def test_c04_normalization_bounds():
    # (a) deterministic baseline: N identical rankings
    ranking = RankedList("q", ("i0", "i1", "i2", "i3", "i4"), truncation_k=5)
    identical = _sample_set_from([ranking] * 100, k=5)
    ids = tuple(f"i{j}" for j in range(12))
    deterministic = compute_ee_metrics(identical, ids, ids[:4])
    part_a = deterministic.eed_norm == 1.0

    # (b) uniform policy in enumeration mode at n=20, k=5
    uniform = exact_exposure(_tempered([1.0] * 20), k=5)
    part_b = normalize_eed(ee_disparity(uniform), 5) == 0.25

    # (c) oracle retriever at n=20, m=5, k=5, N=10k
    from fairrag.collection import Item, LabelEntry, Query, UtilityLabelSet
    from fairrag.retrievers import oracle_permutation

    oracle_ids = tuple(f"d{j:02d}" for j in range(20))
    query = Query(
        query_id="q",
        input_text="x",
        target_output="y",
        corpus=tuple(Item(item_id=i, text="t") for i in oracle_ids),
    )
    labels = UtilityLabelSet(
        entries={
            ("q", iid): LabelEntry(1 if j < 5 else 0, 1.0 if j < 5 else -1.0)
            for j, iid in enumerate(oracle_ids)
        }
    )
    rng = stream_rng(4, "c04-oracle")
    rankings = [oracle_permutation(query, labels, 5, rng) for _ in range(10_000)]
    oracle_metrics = compute_ee_metrics(
        _sample_set_from(rankings, k=5), oracle_ids, oracle_ids[:5]
    )
    part_c = 0.98 <= oracle_metrics.eer_norm <= 1.0

    # (d) 10,000-case fuzz: every normalized metric lands in [0, 1]
    rng = np.random.default_rng(13)
    draw_rng = stream_rng(5, "c04-fuzz")
    violations = 0
    for _ in range(10_000):
        n = int(rng.integers(1, 9))
        k = int(rng.integers(1, 11))
        n_samples = int(rng.integers(1, 16))
        m = int(rng.integers(1, n + 1))
        tempered = _tempered(list(rng.uniform(1, 2, n) ** rng.uniform(0, 8)))
        rankings = [
            pl_sample_gumbel(tempered, k, draw_rng) for _ in range(n_samples)
        ]
        metrics = compute_ee_metrics(
            _sample_set_from(rankings, k=k), tempered.item_ids, tempered.item_ids[:m]
        )
        utilities = rng.uniform(0, 1, n_samples)
        eu_norm = normalize_eu(float(utilities.mean()), float(utilities.max()))
        for value in (metrics.eed_norm, metrics.eer_norm, eu_norm):
            if not (0.0 <= value <= 1.0):
                violations += 1
    part_d = violations == 0

    _report(
        4,
        "normalization bounds: baseline=1, uniform=k/n, oracle in [0.98,1], fuzz in [0,1]",
        part_a and part_b and part_c and part_d,
        f"baseline={deterministic.eed_norm}, uniform={normalize_eed(ee_disparity(uniform), 5)}, "
        f"oracle={oracle_metrics.eer_norm:.4f}, fuzz violations={violations}",
    )


def test_c05_target_exposure_algebra():
    worst = 0.0
    mismatch = 0
    for n in range(1, 31):
        ids = tuple(f"i{j}" for j in range(n))
        for m in range(1, n + 1):
            for k in range(1, n + 1):
                useful_value, other_value = target_exposure(m, n, k)
                if m <= k:
                    expected_useful = 1.0
                    expected_other = (k - m) / (n - m) if n > m else 0.0
                else:
                    expected_useful = k / m
                    expected_other = 0.0
                if useful_value != expected_useful or other_value != expected_other:
                    mismatch += 1
                vector = target_exposure_vector("q", ids, ids[:m], k)
                worst = max(
                    worst, abs(sum(vector.exposure.values()) - min(k, n))
                )
    _report(
        5,
        "target exposure matches the case split and sums to min(k, n) for n <= 30",
        mismatch == 0 and worst <= 1e-12,
        f"case mismatches={mismatch}, max |sum - min(k,n)| = {worst:.2e}",
    )


def test_c06_decomposition_identity():
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        ids = tuple(f"i{j}" for j in range(n))
        eps = ExposureVector("q", dict(zip(ids, rng.uniform(0, 1, n))))
        target = ExposureVector("q", dict(zip(ids, rng.uniform(0, 1, n))))
        lhs = sum((eps.exposure[i] - target.exposure[i]) ** 2 for i in ids)
        rhs = (
            ee_disparity(eps)
            - 2.0 * ee_relevance(eps, target)
            + ee_disparity(target)
        )
        worst = max(worst, abs(lhs - rhs))
    _report(
        6,
        "squared distance decomposes into EE-D - 2 EE-R + ||target||^2",
        worst <= 1e-9,
        f"max deviation = {worst:.2e}",
    )


def test_c07_alpha_monotonicity():
    spec = SyntheticSpec(
        query_count=50,
        n_range=(15, 25),
        pct_useful=0.3,
        score_gap=1.0,
        noise=0.3,
        seed=29,
    )
    collection, labels, _ = generate_synthetic(spec)
    alphas = (0.0, 1.0, 2.0, 4.0, 8.0)
    planted = collection.inline_scores["planted"]
    eed_by_query = []
    for query in collection.queries:
        normalized = minmax_normalize(
            ScoreVector(query.query_id, planted[query.query_id])
        )
        row = []
        for alpha in alphas:
            config = SamplingConfig(
                alpha=alpha, sample_count=100, truncation_k=5, seed=31
            )
            samples = sample_set(normalized, config)
            metrics = compute_ee_metrics(
                samples, query.item_ids, labels.useful_items(query)
            )
            row.append(metrics.eed_norm)
        eed_by_query.append(row)
    eed = np.array(eed_by_query)
    means = eed.mean(axis=0)
    strictly_increasing = bool(np.all(np.diff(means) > 0))
    p_values = []
    for left in range(len(alphas) - 1):
        wins = int(np.sum(eed[:, left + 1] > eed[:, left]))
        p_values.append(
            stats.binomtest(wins, eed.shape[0], alternative="greater").pvalue
        )
    sign_ok = all(p < 0.05 for p in p_values)
    _report(
        7,
        "mean normalized disparity strictly increases over alpha 0<1<2<4<8",
        strictly_increasing and sign_ok,
        f"means={np.round(means, 3).tolist()}, max sign-test p={max(p_values):.2e}",
    )


def test_c08_labeling_recovers_planted_signs(tmp_path):
    spec = SyntheticSpec(
        query_count=20,
        n_range=(30, 30),
        pct_useful=0.3,
        score_gap=1.0,
        noise=0.2,
        seed=37,
        pct_neutral=0.15,
    )
    collection, _, gains = generate_synthetic(spec)
    labels = label_utilities(
        collection,
        SyntheticGenerator(),
        UtilityMetricSpec("token_f1"),
        PromptTemplate(),
    )
    disagreements = 0
    zero_gain_items = 0
    zero_gain_mislabels = 0
    for key, gain in gains.items():
        expected = 1 if gain > 0 else 0
        if labels.entries[key].label != expected:
            disagreements += 1
        if gain == 0.0:
            zero_gain_items += 1
            if labels.entries[key].label != 0 or labels.entries[key].gain != 0.0:
                zero_gain_mislabels += 1
    _report(
        8,
        "utility labeling recovers planted gain signs on 20x30 synthetic collection",
        disagreements == 0 and zero_gain_items > 0 and zero_gain_mislabels == 0,
        f"disagreements={disagreements}, zero-gain items={zero_gain_items}, "
        f"zero-gain mislabels={zero_gain_mislabels}",
    )


def test_c09_eu_normalization_reaches_one(tmp_path):
    path, _, _, _ = _planted_collection_file(tmp_path, query_count=8)
    config = ExperimentConfig(
        collection=path,
        retriever="scores:planted",
        generator="synthetic",
        alphas=(1.0, 2.0, 4.0, 8.0),
        samples=25,
        topk=5,
        seed=41,
        out_dir=tmp_path / "out",
    )
    result = run_experiment(config)
    assert not result.failures
    exact_ones = 0
    queries = set(result.u_max)
    in_bounds = all(0.0 <= r.eu_norm <= 1.0 for r in result.records)
    for query_id in queries:
        pool = list(result.oracle_utilities[query_id])
        for alpha in config.alphas:
            pool.extend(result.sample_utilities[(query_id, alpha)])
        best_normalized = max(
            normalize_eu(u, result.u_max[query_id]) for u in pool
        )
        if best_normalized == 1.0:
            exact_ones += 1
    _report(
        9,
        "per query, the best single-sample normalized utility equals 1.0 exactly",
        exact_ones == len(queries) and len(queries) > 0 and in_bounds,
        f"{exact_ones}/{len(queries)} queries, eu_norm in [0,1]: {in_bounds}",
    )


def test_c10_qualitative_tradeoff_reproduction(tmp_path):
    started = time.monotonic()
    path, _, _, _ = _planted_collection_file(tmp_path)
    config = ExperimentConfig(
        collection=path,
        retriever="scores:planted",
        generator="synthetic",
        alphas=(1.0, 2.0, 4.0, 8.0),
        samples=100,
        topk=5,
        seed=5,
        out_dir=tmp_path / "out",
    )
    result = run_experiment(config)
    assert not result.failures
    summaries = compute_axis_summaries(result.records)
    eer_eu = summaries["eer_norm_vs_eu_norm"]
    slope_positive = not isinstance(eer_eu, str) and eer_eu.slope > 0
    table = interval_table(result.records, result.baseline_records)
    qualifying = [
        row
        for row in table.rows
        if row.lo >= 0.4
        and row.hi <= 1.0
        and row.run_count > 0
        and row.mean_delta_eu is not None
        and row.mean_delta_eu >= 0.0
    ]
    elapsed = time.monotonic() - started
    _report(
        10,
        "positive ranking-quality/utility slope and a non-negative fairness interval",
        slope_positive and len(qualifying) > 0 and elapsed < 600.0,
        f"slope={eer_eu.slope:.3f}, qualifying intervals="
        f"{[(row.lo, row.hi, row.run_count, round(row.mean_delta_eu, 4)) for row in qualifying]}, "
        f"{elapsed:.1f}s",
    )


def test_c11_run_determinism_across_worker_counts(tmp_path):
    path, _, _, _ = _planted_collection_file(tmp_path, query_count=6)
    contents = []
    for i, workers in enumerate(("1", "2", "1")):
        out_dir = tmp_path / f"out{i}"
        code = cli_main(
            [
                "run",
                "--collection",
                str(path),
                "--retriever",
                "scores:planted",
                "--generator",
                "synthetic",
                "--metric",
                "token_f1",
                "--alphas",
                "0,1,4,8",
                "--samples",
                "40",
                "--topk",
                "5",
                "--seed",
                "23",
                "--workers",
                workers,
                "--out",
                str(out_dir),
                "--no-figures",
            ]
        )
        assert code == 0
        contents.append((out_dir / "runs.csv").read_bytes())
    identical = contents[0] == contents[1] == contents[2]
    _report(
        11,
        "fairrag run emits byte-identical runs.csv for reruns at any worker count",
        identical,
        f"{len(contents[0])} bytes",
    )


def test_c12_uniform_policy_relevance_level():
    spec = SyntheticSpec(
        query_count=5,
        n_range=(200, 200),
        pct_useful=0.31,
        score_gap=1.0,
        noise=0.2,
        seed=47,
    )
    collection, labels, _ = generate_synthetic(spec)
    planted = collection.inline_scores["planted"]
    values = []
    for query in collection.queries:
        normalized = minmax_normalize(
            ScoreVector(query.query_id, planted[query.query_id])
        )
        config = SamplingConfig(
            alpha=0.0, sample_count=20_000, truncation_k=5, seed=53
        )
        samples = sample_set(normalized, config)
        metrics = compute_ee_metrics(
            samples, query.item_ids, labels.useful_items(query)
        )
        assert metrics.m == 62  # round(0.31 * 200)
        values.append(metrics.eer_norm)
    mean = float(np.mean(values))
    _report(
        12,
        "uniform policy relevance approximates the useful-item proportion (0.31)",
        abs(mean - 0.31) <= 0.02,
        f"mean eer_norm = {mean:.4f}",
    )
