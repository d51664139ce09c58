"""
run_sweep.py
Runs every pruning variant over one corpus against a single shared no-prune
baseline and writes a comparison table (one CSV row per variant).
Comment out entries in ACTIVE_VARIANTS to control which variants run.
"""

from __future__ import annotations
import csv
import logging
import os
from typing import Any, Dict, List, Mapping, Optional, Tuple

from config import (
    HarnessSettings,
    ModelDims,
    PruneConfig,
    Schedule,
    get_dims,
    get_harness_settings,
    get_prune_config,
)
from corpus import Corpus, load_corpus, write_synthetic_corpus
from encoder import EncoderWeights, init_weights
from harness import ExperimentReport, run_baseline, run_experiment

# -----------------------------------------------------------------------------
# CONFIGURATION
# -----------------------------------------------------------------------------
CORPUS_PATH = "sweep_corpus.jsonl"
SYNTHETIC_COUNT = 200
OUTPUT_DIR = "sweep_reports"

# -----------------------------------------------------------------------------
# VARIANTS TO RUN (comment out what you do not need)
# -----------------------------------------------------------------------------
ACTIVE_VARIANTS: Dict[str, PruneConfig] = {
    "baseline": PruneConfig(schedule=Schedule.NONE),
    "all-merge": PruneConfig(schedule=Schedule.ALL, merge=True),
    "all-drop": PruneConfig(schedule=Schedule.ALL, merge=False),
    "even-merge": PruneConfig(schedule=Schedule.EVEN, merge=True),
    "even-drop": PruneConfig(schedule=Schedule.EVEN, merge=False),
    "odd-merge": PruneConfig(schedule=Schedule.ODD, merge=True),
    "odd-drop": PruneConfig(schedule=Schedule.ODD, merge=False),
}

SWEEP_COLUMNS = [
    "variant",
    "schedule",
    "merge",
    "alpha",
    "empirical_flops",
    "analytical_flops",
    "analytical_flops_split",
    "speedup_ratio",
    "final_mean_length",
    "peak_memory_bytes",
    "throughput",
]

logger = logging.getLogger("alpine.sweep")


def with_alpha(variants: Mapping[str, PruneConfig], alpha: float) -> Dict[str, PruneConfig]:
    return {name: cfg.model_copy(update={"alpha": alpha}) for name, cfg in variants.items()}


def run_sweep(
    corpus: Corpus,
    weights: EncoderWeights,
    dims: ModelDims,
    variants: Mapping[str, PruneConfig],
    batch_size: int,
    settings: Optional[HarnessSettings] = None,
) -> List[Tuple[str, ExperimentReport]]:
    settings = settings or HarnessSettings(batch_size=batch_size)
    logger.info("==> Sweep over %d variants, %d items", len(variants), len(corpus))
    baseline = run_baseline(corpus, weights, dims, batch_size, settings)

    out: List[Tuple[str, ExperimentReport]] = []
    for name, cfg in variants.items():
        logger.info("[%s] schedule=%s merge=%s alpha=%s", name, cfg.schedule.value, cfg.merge, cfg.alpha)
        report = run_experiment(corpus, weights, dims, cfg, batch_size, settings, baseline=baseline)
        logger.info("[%s] speedup x%.3f", name, report.speedup_ratio)
        out.append((name, report))
    return out


def sweep_row(name: str, report: ExperimentReport) -> Dict[str, Any]:
    prune = report.config["prune"]
    return {
        "variant": name,
        "schedule": prune["schedule"],
        "merge": prune["merge"],
        "alpha": prune["alpha"],
        "empirical_flops": report.empirical_flops,
        "analytical_flops": report.analytical_flops,
        "analytical_flops_split": report.analytical_flops_split,
        "speedup_ratio": report.speedup_ratio,
        "final_mean_length": report.layers[-1].mean_length_post_prune if report.layers else 0.0,
        "peak_memory_bytes": report.peak_memory_bytes,
        "throughput": report.throughput,
    }


def emit_sweep_table(results: List[Tuple[str, ExperimentReport]], path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        for name, report in results:
            writer.writerow(sweep_row(name, report))
    logger.info("Sweep table written to %s", path)


def main():
    logging.basicConfig(
        level=logging.INFO, format="%(asctime)s [%(levelname)s] %(message)s"
    )
    dims = get_dims()
    settings = get_harness_settings()

    if not os.path.exists(CORPUS_PATH):
        write_synthetic_corpus(CORPUS_PATH, SYNTHETIC_COUNT, dims, seed=settings.seed)
    corpus = load_corpus(CORPUS_PATH, max_len=dims.max_len, vocab_size=dims.vocab_size)
    weights = init_weights(dims, settings.seed, settings.init_scale, settings.embedding_scale)

    variants = with_alpha(ACTIVE_VARIANTS, get_prune_config().alpha)
    results = run_sweep(corpus, weights, dims, variants, settings.batch_size, settings)
    emit_sweep_table(results, os.path.join(OUTPUT_DIR, "sweep.csv"))
    logger.info("Sweep finished, table in ./%s/", OUTPUT_DIR)


if __name__ == "__main__":
    main()
