"""CSV and SVG emission for run logs and score maps.

Numbers are written with 17 significant digits and figures are rendered
through matplotlib's SVG backend with a fixed hash salt and no date stamp,
so identical logs give identical bytes.
"""

from __future__ import annotations

import os
from collections import defaultdict
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import numpy as np  # noqa: E402
from matplotlib.backends.backend_svg import FigureCanvasSVG  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from .core import RunLog  # noqa: E402

ROUNDS_HEADER = ("trial", "round", "labeled", "accuracy", "ood_ratio", "method", "seed", "config_digest")
SUMMARY_HEADER = (
    "method", "round", "trials", "labeled_median", "accuracy_median", "ood_ratio_median", "config_digest",
)
MAP_HEADER = ("x0", "x1", "bald", "epig_bald", "epig_bald_clamped", "config_digest")

SVG_RC = {"svg.hashsalt": "epig-bench", "svg.fonttype": "path", "path.simplify": False}


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _write_csv(path, header, rows) -> None:
    # plain join: every field is a number, a method tag or a hex digest
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(fmt(v) for v in row) + "\n")


def _check_digest(logs: Sequence[RunLog]) -> str:
    digests = sorted({log.config_digest for log in logs})
    if len(digests) > 1:
        raise ValueError(f"logs mix config digests: {', '.join(d[:12] for d in digests)}")
    return digests[0] if digests else ""


def round_rows(logs: Sequence[RunLog]) -> list:
    rows = []
    for log in sorted(logs, key=lambda l: (l.method, l.trial)):
        for r in log.records:
            rows.append((log.trial, r.round, r.labeled, r.accuracy, r.ood_ratio, log.method, log.seed,
                         log.config_digest))
    return rows


def summary_rows(logs: Sequence[RunLog]) -> list:
    """Per (method, round) medians across trials."""
    groups = defaultdict(list)
    for log in logs:
        for r in log.records:
            groups[(log.method, r.round)].append(r)
    digest = _check_digest(logs)
    rows = []
    for (method, rnd), recs in sorted(groups.items()):
        rows.append((
            method, rnd, len(recs),
            float(np.median([r.labeled for r in recs])),
            float(np.median([r.accuracy for r in recs])),
            float(np.median([r.ood_ratio for r in recs])),
            digest,
        ))
    return rows


def _new_figure(width=5.0, height=3.5):
    fig = Figure(figsize=(width, height))
    FigureCanvasSVG(fig)
    return fig, fig.add_subplot(111)


def _save_svg(fig, path) -> None:
    with matplotlib.rc_context(SVG_RC):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})


def line_chart(summary: list, column: int, ylabel: str, path) -> None:
    fig, ax = _new_figure()
    by_method = defaultdict(list)
    for row in summary:
        by_method[row[0]].append(row)
    for method in sorted(by_method):
        rows = by_method[method]
        ax.plot([r[3] for r in rows], [r[column] for r in rows], marker="o", ms=2.5, lw=1.2, label=method)
    ax.set_xlabel("labeled examples")
    ax.set_ylabel(ylabel)
    if by_method:
        ax.legend(frameon=False, fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save_svg(fig, path)


def write_results(logs: Sequence[RunLog], out_dir, prefix: str = "") -> dict:
    """Write rounds.csv, summary.csv, accuracy.svg and ood_ratio.svg; returns their paths."""
    logs = list(logs)
    _check_digest(logs)
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        name: os.path.join(out_dir, prefix + name)
        for name in ("rounds.csv", "summary.csv", "accuracy.svg", "ood_ratio.svg")
    }
    summary = summary_rows(logs)
    _write_csv(paths["rounds.csv"], ROUNDS_HEADER, round_rows(logs))
    _write_csv(paths["summary.csv"], SUMMARY_HEADER, summary)
    line_chart(summary, 4, "test accuracy (median)", paths["accuracy.svg"])
    line_chart(summary, 5, "acquired OoD fraction (median)", paths["ood_ratio.svg"])
    return paths


def write_score_map(result: dict, out_dir, digest: str = "", prefix: str = "") -> dict:
    """score_map.csv plus one scatter panel per score, training and eval points overlaid."""
    os.makedirs(out_dir, exist_ok=True)
    grid = np.asarray(result["grid"])
    bald, epig = np.asarray(result["bald"]), np.asarray(result["epig_bald"])
    csv_path = os.path.join(out_dir, prefix + "score_map.csv")
    svg_path = os.path.join(out_dir, prefix + "score_map.svg")
    rows = [(g[0], g[1], b, e, max(e, 0.0), digest) for g, b, e in zip(grid, bald, epig)]
    _write_csv(csv_path, MAP_HEADER, rows)

    fig = Figure(figsize=(9.0, 4.0))
    FigureCanvasSVG(fig)
    train = result.get("train", [])
    tx = np.array([ex.x for ex in train]).reshape(-1, 2)
    ex = np.asarray(result.get("eval_x", np.zeros((0, 2)))).reshape(-1, 2)
    for k, (title, vals) in enumerate((("BALD", bald), ("EPIG-BALD", epig))):
        ax = fig.add_subplot(1, 2, k + 1)
        if len(grid):
            sc = ax.scatter(grid[:, 0], grid[:, 1], c=vals, s=6, marker="s", cmap="viridis", linewidths=0)
            fig.colorbar(sc, ax=ax, shrink=0.8)
        ax.scatter(ex[:, 0], ex[:, 1], s=4, c="white", edgecolors="k", linewidths=0.3, label="eval")
        ax.scatter(tx[:, 0], tx[:, 1], s=14, c="red", marker="x", linewidths=0.8, label="train")
        ax.set_title(title, fontsize=10)
        ax.set_aspect("equal", adjustable="box")
    fig.tight_layout()
    _save_svg(fig, svg_path)
    return {"score_map.csv": csv_path, "score_map.svg": svg_path}


def write_ablation(results: dict, out_dir, digest: str) -> dict:
    """``results`` as returned by ablate_eval_size.  One row per (size, method).

    Each size runs under its own derived config, so rows carry the digest
    of the base config the ablation was launched from.
    """
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for size in sorted(results):
        logs, _ = results[size]
        finals = defaultdict(list)
        for log in logs:
            if log.records:
                finals[log.method].append(log.records[-1])
        for method in sorted(finals):
            recs = finals[method]
            rows.append((size, method, len(recs), float(np.median([r.accuracy for r in recs])),
                         float(np.median([r.ood_ratio for r in recs])), digest))
    path = os.path.join(out_dir, "ablation.csv")
    _write_csv(path, ("eval_size", "method", "trials", "final_accuracy_median", "final_ood_ratio_median",
                      "config_digest"), rows)
    fig, ax = _new_figure()
    by_method = defaultdict(list)
    for r in rows:
        by_method[r[1]].append(r)
    for method in sorted(by_method):
        ax.plot([r[0] for r in by_method[method]], [r[3] for r in by_method[method]], marker="o", label=method)
    ax.set_xlabel("evaluation set size")
    ax.set_ylabel("final test accuracy (median)")
    if by_method:
        ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    svg = os.path.join(out_dir, "ablation.svg")
    _save_svg(fig, svg)
    return {"ablation.csv": path, "ablation.svg": svg}
