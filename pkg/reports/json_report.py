# json_report.py
from __future__ import annotations
from typing import TYPE_CHECKING
import os

if TYPE_CHECKING:
    from harness import ExperimentReport


def write_json_report(report: "ExperimentReport", path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(report.model_dump_json(indent=2))
        f.write("\n")


def read_json_report(path: str) -> "ExperimentReport":
    from harness import ExperimentReport

    with open(path, "r", encoding="utf-8") as f:
        return ExperimentReport.model_validate_json(f.read())
