"""Figure rendering for the report path.

Renders the standard tradeoff views from run records to PNG files next to
the delimited plot data: one scatter-plus-curve figure per axis pair and
one per-temperature distribution figure per metric.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .harness import AXIS_PAIRS, RunRecord, TradeoffSummary, _binned_curve

__all__ = ["render_report_figures"]

_AXIS_LABELS = {
    "eed_norm": "normalized exposure disparity (EE-D)",
    "eer_norm": "normalized exposure relevance (EE-R)",
    "eu_norm": "normalized expected utility (EU)",
}


def _pair_figure(
    points: Sequence[tuple[float, float]],
    x_name: str,
    y_name: str,
    summary: TradeoffSummary | None,
    path: Path,
) -> None:
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    ax.scatter(xs, ys, s=12, alpha=0.35, color="#4878cf", label="runs")
    curve = _binned_curve(points)
    if len(curve) >= 2:
        ax.plot(
            [c[0] for c in curve],
            [c[1] for c in curve],
            color="#d65f5f",
            marker="o",
            markersize=3,
            label="binned mean",
        )
    if summary is not None:
        grid = [0.0, 1.0]
        ax.plot(
            grid,
            [summary.intercept + summary.slope * g for g in grid],
            color="#333333",
            linestyle="--",
            linewidth=1,
            label=f"fit (slope {summary.slope:.3f})",
        )
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel(_AXIS_LABELS[x_name])
    ax.set_ylabel(_AXIS_LABELS[y_name])
    ax.legend(fontsize=8, loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _alpha_figure(records: Sequence[RunRecord], metric_name: str, path: Path) -> None:
    alphas = sorted({r.alpha for r in records})
    groups = [[getattr(r, metric_name) for r in records if r.alpha == a] for a in alphas]
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.boxplot(groups, showmeans=True)
    ax.set_xticklabels([f"{a:g}" for a in alphas])
    ax.set_xlabel("temperature alpha")
    ax.set_ylabel(_AXIS_LABELS[metric_name])
    ax.set_ylim(-0.02, 1.02)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_report_figures(
    records: Sequence[RunRecord],
    summaries: dict[str, TradeoffSummary | str],
    out_dir: str | Path,
) -> list[Path]:
    """Render the axis-pair and per-temperature figures; returns written paths."""
    out_dir = Path(out_dir)
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    finite = [r for r in records if math.isfinite(r.alpha)]
    written: list[Path] = []
    if not finite:
        return written
    for x_name, y_name in AXIS_PAIRS:
        key = f"{x_name}_vs_{y_name}"
        summary = summaries.get(key)
        points = [(getattr(r, x_name), getattr(r, y_name)) for r in finite]
        path = fig_dir / f"{key.replace('_norm', '')}.png"
        _pair_figure(
            points,
            x_name,
            y_name,
            summary if isinstance(summary, TradeoffSummary) else None,
            path,
        )
        written.append(path)
    for metric_name in ("eed_norm", "eer_norm", "eu_norm"):
        path = fig_dir / f"alpha_vs_{metric_name.replace('_norm', '')}.png"
        _alpha_figure(finite, metric_name, path)
        written.append(path)
    return written
