"""Command-line interface: label, run, baseline, report, synth, stats.

Exit codes: 0 on success, 1 when some queries failed (a failure manifest is
written next to the other outputs), 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .collection import (
    CollectionError,
    SyntheticSpec,
    collection_stats,
    generate_synthetic,
    load_collection,
    load_label_tsv,
    save_collection,
    save_label_tsv,
)
from .generation import (
    CachingGenerator,
    ExternalProcessGenerator,
    GeneratorError,
    PromptTemplate,
    SyntheticGenerator,
    UtilityMetricSpec,
    label_utilities,
)
from .harness import (
    BASELINE_ALPHA,
    ConfigError,
    ExperimentConfig,
    ExperimentResult,
    compute_axis_summaries,
    emit_reports,
    interval_table,
    read_runs_csv,
    run_experiment,
)
from .retrievers import ScoreFileError

log = logging.getLogger("fairrag")

_CONFIG_KEYS = {
    "collection",
    "retriever",
    "generator",
    "metric",
    "template",
    "alphas",
    "samples",
    "topk",
    "seed",
    "out",
    "labels",
    "scores_file",
    "workers",
    "bm25_k1",
    "bm25_b",
    "timeout",
    "no_baseline",
    "no_figures",
    "dump_samples",
}


def _read_config_file(path: Path) -> dict[str, str]:
    """Flat ``key = value`` configuration; '#' starts a comment."""
    values: dict[str, str] = {}
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip().strip("\"'")
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
        values[key] = value
    return values


def _parse_alphas(text: str) -> tuple[float, ...]:
    try:
        alphas = tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"bad --alphas value {text!r}") from exc
    if not alphas:
        raise ConfigError("alphas must be non-empty")
    return alphas


def _parse_bool(value: str | bool) -> bool:
    if isinstance(value, bool):
        return value
    return value.strip().lower() in ("1", "true", "yes", "on")


def _add_common_run_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--collection", help="collection JSONL path")
    sub.add_argument(
        "--retriever", default=None, help="bm25 | scores:<name> | oracle"
    )
    sub.add_argument(
        "--generator", default=None, help='synthetic | cmd:"<command line>"'
    )
    sub.add_argument(
        "--metric", default=None, help="exact_match | token_f1 | rouge1_f | mae_inverted:<ub>"
    )
    sub.add_argument("--template", default=None, help="prompt template file")
    sub.add_argument("--alphas", default=None, help="comma-separated temperatures")
    sub.add_argument("--samples", default=None, help="rankings sampled per run (N)")
    sub.add_argument("--topk", default=None, help="truncation depth (k)")
    sub.add_argument("--seed", default=None, help="master seed")
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--labels", default=None, help="label TSV (default: inline labels)")
    sub.add_argument("--scores-file", default=None, help="score run file for scores:<name>")
    sub.add_argument("--workers", default=None, help="parallel query workers")
    sub.add_argument("--bm25-k1", default=None)
    sub.add_argument("--bm25-b", default=None)
    sub.add_argument("--timeout", default=None, help="per-request generator timeout (s)")
    sub.add_argument("--no-baseline", action="store_true", default=None)
    sub.add_argument("--no-figures", action="store_true", default=None)
    sub.add_argument(
        "--dump-samples",
        action="store_true",
        default=None,
        help="write every sampled ranking to samples.jsonl",
    )
    sub.add_argument("--config", default=None, help="key=value config file; flags override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairrag",
        description="Fairness-aware stochastic ranking evaluation for RAG",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    label = commands.add_parser("label", help="build binary utility labels")
    label.add_argument("--collection", required=True)
    label.add_argument("--generator", default="synthetic")
    label.add_argument("--metric", default="token_f1")
    label.add_argument("--template", default=None)
    label.add_argument("--out", required=True, help="output directory")
    label.add_argument("--checkpoint", default=None, help="resumable checkpoint path")
    label.add_argument("--timeout", type=float, default=60.0)

    run = commands.add_parser("run", help="alpha sweep over a collection")
    _add_common_run_flags(run)

    baseline = commands.add_parser("baseline", help="deterministic baseline only")
    _add_common_run_flags(baseline)

    report = commands.add_parser("report", help="recompute analytics from runs.csv")
    report.add_argument("--runs", required=True, help="runs.csv produced by run/baseline")
    report.add_argument("--out", default=None, help="output directory (default: alongside runs)")
    report.add_argument("--no-figures", action="store_true")

    synth = commands.add_parser("synth", help="generate a planted synthetic collection")
    synth.add_argument("--queries", type=int, required=True)
    synth.add_argument("--n-range", default="20,40", help="corpus size range lo,hi")
    synth.add_argument("--pct-useful", type=float, default=0.3)
    synth.add_argument("--score-gap", type=float, default=1.0)
    synth.add_argument("--noise", type=float, default=0.25)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--hard-negatives", type=int, default=0)
    synth.add_argument("--pct-neutral", type=float, default=0.0)
    synth.add_argument("--out", required=True, help="collection JSONL path")
    synth.add_argument("--labels-out", default=None, help="label TSV path")

    stats = commands.add_parser("stats", help="collection statistics")
    stats.add_argument("--collection", required=True)
    stats.add_argument("--labels", default=None)

    return parser


def _merge_config(args: argparse.Namespace) -> dict[str, str]:
    values: dict[str, str] = {}
    if getattr(args, "config", None):
        values.update(_read_config_file(Path(args.config)))
    for key in _CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return values


def _experiment_config(args: argparse.Namespace, baseline_mode: bool) -> ExperimentConfig:
    values = _merge_config(args)
    if "collection" not in values:
        raise ConfigError("--collection is required")
    try:
        config = ExperimentConfig(
            collection=Path(values["collection"]),
            retriever=values.get("retriever", "bm25"),
            generator=values.get("generator", "synthetic"),
            metric=values.get("metric", "token_f1"),
            template_path=Path(values["template"]) if values.get("template") else None,
            alphas=_parse_alphas(values.get("alphas", "1,2,4,8")),
            samples=int(values.get("samples", 100)),
            topk=int(values.get("topk", 5)),
            seed=int(values.get("seed", 0)),
            baseline_mode=baseline_mode,
            out_dir=Path(values.get("out", "fairrag-out")),
            labels_path=Path(values["labels"]) if values.get("labels") else None,
            scores_path=Path(values["scores_file"]) if values.get("scores_file") else None,
            workers=int(values.get("workers", 1)),
            bm25_k1=float(values.get("bm25_k1", 1.2)),
            bm25_b=float(values.get("bm25_b", 0.75)),
            generator_timeout=float(values.get("timeout", 60.0)),
            include_baseline=not _parse_bool(values.get("no_baseline", False)),
            dump_samples=_parse_bool(values.get("dump_samples", False)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad configuration value: {exc}") from exc
    config.validate()
    return config


def _print_stats(stats_dict: dict) -> None:
    print(
        "queries={query_count}  avg_docs={avg_docs:.2f} ({std_docs:.2f})  "
        "avg_pos={avg_pos_labels:.2f} ({std_pos_labels:.2f})  "
        "avg_pct_pos={avg_pct_pos:.2f}%".format(**stats_dict)
    )


def _emit_experiment_outputs(
    result: ExperimentResult,
    config: ExperimentConfig,
    render_figures: bool,
) -> int:
    all_records = result.records + result.baseline_records
    summaries = compute_axis_summaries(result.records)
    table = None
    if result.baseline_records and result.records:
        covered = {r.query_id for r in result.baseline_records}
        in_scope = [r for r in result.records if r.query_id in covered]
        if in_scope:
            table = interval_table(in_scope, result.baseline_records)
    provenance = {
        "config": {k: str(v) for k, v in asdict(config).items()},
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "u_max_zero_queries": result.zero_ceiling_queries,
    }
    written = emit_reports(
        result.records,
        result.baseline_records,
        summaries,
        table,
        config.out_dir,
        provenance=provenance,
        failures=result.failures,
        zero_ceiling_queries=result.zero_ceiling_queries,
        stats=result.stats,
    )
    if render_figures and all_records:
        from .figures import render_report_figures

        render_report_figures(all_records, summaries, config.out_dir)
    if result.sample_sets:
        from fairrag.sampler import dump_sample_set

        samples_path = config.out_dir / "samples.jsonl"
        for i, samples in enumerate(result.sample_sets):
            dump_sample_set(samples, samples_path, append=i > 0)
        print(f"sampled rankings dumped to {samples_path}")
    if result.stats:
        _print_stats(result.stats)
    print(
        f"wrote {len(result.records)} sweep and {len(result.baseline_records)} "
        f"baseline records to {written['runs']}"
    )
    for key, value in summaries.items():
        if isinstance(value, str):
            print(f"{key}: {value}")
        else:
            print(
                f"{key}: slope={value.slope:.4f} auc={value.auc:.4f} "
                f"points={value.point_count}"
            )
    if result.zero_ceiling_queries:
        print(
            "queries with zero utility ceiling (EU normalized as 0): "
            + ", ".join(result.zero_ceiling_queries)
        )
    if result.failures:
        print(
            f"{len(result.failures)} queries failed; see failures.json",
            file=sys.stderr,
        )
        return 1
    return 0


def _cmd_run(args: argparse.Namespace, baseline_mode: bool) -> int:
    config = _experiment_config(args, baseline_mode)
    result = run_experiment(config)
    merged = _merge_config(args)
    render = not _parse_bool(merged.get("no_figures", False))
    return _emit_experiment_outputs(result, config, render)


def _cmd_label(args: argparse.Namespace) -> int:
    collection = load_collection(args.collection)
    metric = UtilityMetricSpec.parse(args.metric)
    if args.template:
        template = PromptTemplate(template=Path(args.template).read_text(encoding="utf-8"))
    else:
        template = PromptTemplate()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = (
        Path(args.checkpoint) if args.checkpoint else out_dir / "label-checkpoint.jsonl"
    )
    if args.generator == "synthetic":
        adapter = CachingGenerator(SyntheticGenerator())
    elif args.generator.startswith("cmd:"):
        adapter = CachingGenerator(
            ExternalProcessGenerator(args.generator[len("cmd:") :], timeout=args.timeout)
        )
    else:
        raise ConfigError(f"generator must be synthetic or cmd:<command>, got {args.generator!r}")
    try:
        with adapter:
            labels = label_utilities(
                collection, adapter, metric, template, checkpoint_path=checkpoint
            )
    except GeneratorError as exc:
        print(
            f"generator failed: {exc}\ncompleted queries are checkpointed at "
            f"{checkpoint}; rerun to resume",
            file=sys.stderr,
        )
        return 1
    labels_path = out_dir / "labels.tsv"
    save_label_tsv(labels, labels_path)
    stats = collection_stats(collection, labels)
    _print_stats(asdict(stats))
    print(f"wrote {len(labels.entries)} labels to {labels_path}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    records = read_runs_csv(args.runs)
    sweep = [r for r in records if r.alpha != BASELINE_ALPHA]
    baseline = [r for r in records if r.alpha == BASELINE_ALPHA]
    out_dir = Path(args.out) if args.out else Path(args.runs).parent
    summaries = compute_axis_summaries(sweep)
    table = None
    if baseline and sweep:
        covered = {r.query_id for r in baseline}
        in_scope = [r for r in sweep if r.query_id in covered]
        if in_scope:
            table = interval_table(in_scope, baseline)
    emit_reports(
        sweep,
        baseline,
        summaries,
        table,
        out_dir,
        provenance={"source_runs": str(args.runs)},
    )
    if not args.no_figures and records:
        from .figures import render_report_figures

        render_report_figures(records, summaries, out_dir)
    print(f"report for {len(sweep)} sweep and {len(baseline)} baseline records in {out_dir}")
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    lo, _, hi = args.n_range.partition(",")
    try:
        n_range = (int(lo), int(hi or lo))
    except ValueError as exc:
        raise ConfigError(f"bad --n-range {args.n_range!r}") from exc
    spec = SyntheticSpec(
        query_count=args.queries,
        n_range=n_range,
        pct_useful=args.pct_useful,
        score_gap=args.score_gap,
        noise=args.noise,
        seed=args.seed,
        hard_negative_count=args.hard_negatives,
        pct_neutral=args.pct_neutral,
    )
    collection, labels, _ = generate_synthetic(spec)
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    save_collection(collection, out)
    if args.labels_out:
        save_label_tsv(labels, args.labels_out)
    stats = collection_stats(collection, labels)
    _print_stats(asdict(stats))
    print(f"wrote {len(collection.queries)} queries to {out}")
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    collection = load_collection(args.collection)
    if args.labels:
        labels = load_label_tsv(args.labels)
    elif collection.inline_labels is not None:
        labels = collection.inline_labels
    else:
        raise ConfigError("no labels: pass --labels or use inline labels")
    stats = collection_stats(collection, labels)
    print(json.dumps(asdict(stats), indent=2))
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args, baseline_mode=False)
        if args.command == "baseline":
            return _cmd_run(args, baseline_mode=True)
        if args.command == "label":
            return _cmd_label(args)
        if args.command == "report":
            return _cmd_report(args)
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "stats":
            return _cmd_stats(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, CollectionError, ScoreFileError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
