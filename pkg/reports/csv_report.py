# csv_report.py
from __future__ import annotations
from typing import TYPE_CHECKING, Any, Dict, List
import csv
import os

if TYPE_CHECKING:
    from harness import ExperimentReport

# one row per layer, then the summary row
REPORT_COLUMNS = [
    "layer",
    "mean_kept_length",
    "mean_length_post_prune",
    "mean_pruned_fraction",
    "mha_flops",
    "ffnn_flops",
    "other_flops",
    "analytical_mha_flops",
    "analytical_ffnn_flops",
]

SUMMARY_LABEL = "summary"


def report_rows(report: "ExperimentReport") -> List[Dict[str, Any]]:
    rows = [
        {k: getattr(layer, k) for k in REPORT_COLUMNS} for layer in report.layers
    ]
    n = len(report.layers) or 1
    summary: Dict[str, Any] = {"layer": SUMMARY_LABEL}
    for k in ("mean_kept_length", "mean_length_post_prune", "mean_pruned_fraction"):
        summary[k] = sum(r[k] for r in rows) / n
    for k in ("mha_flops", "ffnn_flops", "other_flops", "analytical_mha_flops", "analytical_ffnn_flops"):
        summary[k] = sum(r[k] for r in rows)
    rows.append(summary)
    return rows


def write_csv_report(report: "ExperimentReport", path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for row in report_rows(report):
            writer.writerow(row)
