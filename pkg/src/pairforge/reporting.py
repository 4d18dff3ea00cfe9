"""Report assembly: delimited accuracy tables plus rendered figures.

`write_report` drops four artifacts into the output directory:

  report.json               full nested report (score output + extras)
  accuracy.csv              model,factor,stratum,n,correct,accuracy rows
  fig_accuracy_factors.png  grouped bars per stratification factor
  fig_wrong_overlap.png     wrong-set IoU (lower) / same-wrong-answer
                            fraction (upper), when >= 2 respondents
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .benchmark_build import BenchmarkManifest
from .harness.scoring import Trial, same_wrong_fraction, score, wrong_set_iou

FACTOR_TABLES = (
    ("by_depth", "object depth"),
    ("by_light", "pair brightness"),
    ("by_plausibility", "pose plausibility"),
    ("by_label_bucket", "labels per pair"),
    ("by_object_category", "object category"),
    ("by_scene_category", "scene category"),
)


def accuracy_rows(report: dict) -> list[dict]:
    rows = []
    for model, entry in report["models"].items():
        rows.append(
            {
                "model": model,
                "factor": "overall",
                "stratum": "overall",
                "n": entry["overall"]["n"],
                "correct": entry["overall"]["correct"],
                "accuracy": entry["overall"]["accuracy"],
            }
        )
        for table, _ in FACTOR_TABLES:
            for stratum, cell in entry[table].items():
                rows.append(
                    {
                        "model": model,
                        "factor": table.removeprefix("by_"),
                        "stratum": stratum,
                        "n": cell["n"],
                        "correct": cell["correct"],
                        "accuracy": cell["accuracy"],
                    }
                )
    return rows


def _figure_accuracy(report: dict, out_path: Path) -> None:
    models = sorted(report["models"])
    usable = [(t, title) for t, title in FACTOR_TABLES[:4]]
    fig, axes = plt.subplots(2, 2, figsize=(11, 7))
    rand = report.get("expected_random_accuracy")
    for ax, (table, title) in zip(axes.ravel(), usable):
        strata = sorted({s for m in models for s in report["models"][m][table]})
        width = 0.8 / max(1, len(models))
        xs = np.arange(len(strata))
        for i, model in enumerate(models):
            vals = [report["models"][model][table].get(s, {}).get("accuracy") or 0.0 for s in strata]
            ax.bar(xs + i * width, vals, width=width, label=model)
        if rand is not None:
            ax.axhline(rand, color="gray", linestyle="--", linewidth=1)
        ax.set_xticks(xs + 0.4 - width / 2)
        ax.set_xticklabels(strata, rotation=20, ha="right", fontsize=8)
        ax.set_ylim(0, 1)
        ax.set_title(title, fontsize=10)
    axes[0, 0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def _figure_wrong_overlap(trials_by_model: dict[str, list[Trial]], out_path: Path) -> None:
    names = sorted(trials_by_model)
    n = len(names)
    mat = np.full((n, n), np.nan)
    for i, a in enumerate(names):
        for j, b in enumerate(names):
            if i > j:
                mat[i, j] = wrong_set_iou(trials_by_model[a], trials_by_model[b])
            elif i < j:
                frac = same_wrong_fraction(trials_by_model[a], trials_by_model[b])
                mat[i, j] = np.nan if frac is None else frac
    fig, ax = plt.subplots(figsize=(1.1 * n + 2, 1.0 * n + 1.5))
    im = ax.imshow(np.nan_to_num(mat), vmin=0, vmax=1, cmap="viridis")
    for i in range(n):
        for j in range(n):
            if i != j and not np.isnan(mat[i, j]):
                ax.text(j, i, f"{mat[i, j]:.2f}", ha="center", va="center", fontsize=8, color="w")
    ax.set_xticks(range(n))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_yticks(range(n))
    ax.set_yticklabels(names, fontsize=8)
    ax.set_title("lower: wrong-set IoU / upper: same-wrong-answer fraction", fontsize=9)
    fig.colorbar(im, shrink=0.8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def write_report(
    trials_by_model: dict[str, list[Trial]],
    manifest: BenchmarkManifest,
    out_dir,
    strict: bool = False,
) -> dict:
    """Score all trial sets, write tables and figures; returns the report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    all_trials = [t for ts in trials_by_model.values() for t in ts]
    report = score(all_trials, manifest, strict=strict)

    pairings = {}
    names = sorted(trials_by_model)
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            pairings[f"{a}|{b}"] = {
                "wrong_set_iou": wrong_set_iou(trials_by_model[a], trials_by_model[b]),
                "same_wrong_fraction": same_wrong_fraction(trials_by_model[a], trials_by_model[b]),
            }
    report["pairings"] = pairings

    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    rows = accuracy_rows(report)
    with open(out / "accuracy.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["model", "factor", "stratum", "n", "correct", "accuracy"])
        writer.writeheader()
        writer.writerows(rows)
    _figure_accuracy(report, out / "fig_accuracy_factors.png")
    if len(trials_by_model) >= 2:
        _figure_wrong_overlap(trials_by_model, out / "fig_wrong_overlap.png")
    return report
