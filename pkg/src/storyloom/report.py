"""Report rendering for the analytics CLI: aligned-column text tables, JSON,
and matplotlib figures written alongside them."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .analytics import AsymmetryStats, MetricComparison, NarrativeMetrics, TransitionMatrix


def format_table(headers: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    """Aligned-column text table; numbers right-justified, text left."""

    def render(value: Any) -> str:
        if isinstance(value, float):
            return f"{value:.4f}"
        return str(value)

    cells = [[render(v) for v in row] for row in rows]
    widths = [
        max(len(headers[i]), *(len(row[i]) for row in cells)) if cells else len(headers[i])
        for i in range(len(headers))
    ]

    def line(row: Sequence[str], source: Sequence[Any]) -> str:
        parts = []
        for i, text in enumerate(row):
            pad = text.rjust(widths[i]) if isinstance(source[i], (int, float)) else text.ljust(widths[i])
            parts.append(pad)
        return "  ".join(parts).rstrip()

    out = [line(headers, headers), line(["-" * w for w in widths], headers)]
    for row, raw in zip(cells, rows):
        out.append(line(row, raw))
    return "\n".join(out) + "\n"


def metrics_table(metrics: NarrativeMetrics) -> str:
    return format_table(
        ["metric", "value"],
        [
            ["word_count", metrics.word_count],
            ["gunning_fog", metrics.gunning_fog],
            ["dialogue_ratio", metrics.dialogue_ratio],
            ["location_count", metrics.location_count],
        ],
    )


def corpus_metrics_table(records: Sequence[tuple[str, NarrativeMetrics]]) -> str:
    rows = [
        [story_id, m.word_count, m.gunning_fog, m.dialogue_ratio, m.location_count]
        for story_id, m in records
    ]
    return format_table(
        ["story", "word_count", "gunning_fog", "dialogue_ratio", "location_count"], rows
    )


def compare_table(results: dict[str, MetricComparison]) -> str:
    rows = [
        [c.metric, c.mean_a, c.sd_a, c.mean_b, c.sd_b, c.t_stat, c.df, c.p_value]
        for c in results.values()
    ]
    return format_table(
        ["metric", "mean_a", "sd_a", "mean_b", "sd_b", "paired_t", "df", "p"], rows
    )


def transitions_table(matrix: TransitionMatrix) -> str:
    headers = ["from \\ to"] + list(matrix.persona_ids) + ["opening"]
    rows = []
    for i, pid in enumerate(matrix.persona_ids):
        rows.append([pid] + list(matrix.counts[i]) + [matrix.opening_counts[i]])
    return format_table(headers, rows)


def asymmetry_table(stats: AsymmetryStats) -> str:
    rows = [[p.persona_a, p.persona_b, p.forward, p.reverse, p.diff] for p in stats.pairs]
    table = format_table(["persona_a", "persona_b", "forward", "reverse", "|diff|"], rows)
    sd = "n/a" if stats.sd is None else f"{stats.sd:.4f}"
    t = "n/a" if stats.t_stat is None else f"{stats.t_stat:.4f}"
    return table + f"\nmean |diff| = {stats.mean:.4f}  sd = {sd}  t = {t}  df = {stats.df}\n"


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------


def save_metrics_figure(metrics: NarrativeMetrics, path: Path) -> None:
    fig, axes = plt.subplots(1, 4, figsize=(10, 2.8))
    values = metrics.as_dict()
    for ax, (name, value) in zip(axes, values.items()):
        ax.bar([0], [value], color="#6b5b95", width=0.5)
        ax.set_xticks([])
        ax.set_title(name.replace("_", " "), fontsize=9)
        ax.tick_params(labelsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_corpus_metrics_figure(records: Sequence[tuple[str, NarrativeMetrics]], path: Path) -> None:
    names = [story_id for story_id, _ in records]
    fig, axes = plt.subplots(1, 4, figsize=(max(10, len(names) * 1.2), 3.2))
    for ax, metric in zip(axes, ("word_count", "gunning_fog", "dialogue_ratio", "location_count")):
        ax.bar(range(len(names)), [getattr(m, metric) for _, m in records], color="#6b5b95")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
        ax.set_title(metric.replace("_", " "), fontsize=9)
        ax.tick_params(labelsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_compare_figure(results: dict[str, MetricComparison], path: Path) -> None:
    fig, axes = plt.subplots(1, len(results), figsize=(3.0 * len(results), 3.2))
    if len(results) == 1:
        axes = [axes]
    for ax, comparison in zip(axes, results.values()):
        ax.bar(
            [0, 1],
            [comparison.mean_a, comparison.mean_b],
            yerr=[comparison.sd_a, comparison.sd_b],
            color=["#4878a8", "#d4627a"],
            capsize=4,
        )
        ax.set_xticks([0, 1])
        ax.set_xticklabels(["A", "B"], fontsize=8)
        ax.set_title(
            f"{comparison.metric}\nt={comparison.t_stat:.2f} p={comparison.p_value:.3g}",
            fontsize=9,
        )
        ax.tick_params(labelsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_transitions_figure(matrix: TransitionMatrix, path: Path) -> None:
    n = len(matrix.persona_ids)
    fig, (left, right) = plt.subplots(
        1, 2, figsize=(max(9, n * 1.1), max(4.5, n * 0.55)), width_ratios=[3, 2]
    )
    image = left.imshow(matrix.counts, cmap="Purples")
    left.set_xticks(range(n))
    left.set_yticks(range(n))
    left.set_xticklabels(matrix.persona_ids, rotation=60, ha="right", fontsize=7)
    left.set_yticklabels(matrix.persona_ids, fontsize=7)
    left.set_xlabel("to", fontsize=8)
    left.set_ylabel("from", fontsize=8)
    left.set_title("selection transitions", fontsize=9)
    peak = max((max(row) for row in matrix.counts), default=0)
    for i in range(n):
        for j in range(n):
            count = matrix.counts[i][j]
            if count:
                color = "white" if peak and count > peak * 0.6 else "black"
                left.text(j, i, str(count), ha="center", va="center", fontsize=6, color=color)
    fig.colorbar(image, ax=left, shrink=0.8)

    # Total selections = openings plus every arrival via a transition.
    incoming = [sum(matrix.counts[i][j] for i in range(n)) for j in range(n)]
    usage = [matrix.opening_counts[i] + incoming[i] for i in range(n)]
    xs = range(n)
    right.bar([x - 0.2 for x in xs], matrix.opening_counts, width=0.4, label="opening", color="#9fc2e8")
    right.bar([x + 0.2 for x in xs], usage, width=0.4, label="total selections", color="#6b5b95")
    right.set_xticks(list(xs))
    right.set_xticklabels(matrix.persona_ids, rotation=60, ha="right", fontsize=7)
    right.legend(fontsize=7)
    right.set_title("persona usage", fontsize=9)
    right.tick_params(labelsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_report(
    out_dir: Path,
    name: str,
    payload: dict,
    table: str,
    figures: dict[str, Any],
) -> list[Path]:
    """Write <name>.json + <name>.txt plus rendered figures into out_dir."""
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    json_path = out_dir / f"{name}.json"
    json_path.write_text(json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    written.append(json_path)
    txt_path = out_dir / f"{name}.txt"
    txt_path.write_text(table, encoding="utf-8")
    written.append(txt_path)
    for figure_name, renderer in figures.items():
        figure_path = out_dir / figure_name
        renderer(figure_path)
        written.append(figure_path)
    return written
