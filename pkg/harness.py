# harness.py
from __future__ import annotations
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import batched
from typing import Any, Optional, Sequence, Union
import logging
import time

import numpy as np
from pydantic import BaseModel

from config import HarnessSettings, ModelDims, PruneConfig, ReportFormat, Schedule
from corpus import Corpus, SpecialIds, TokenSequence, encode_corpus
from encoder import EncoderWeights, classify, encoder_forward
from errors import ContractViolation, ReportWriteError
from flops_model import flops_ffnn, flops_mha, model_total, model_total_split
from numerics import Block, FlopLedger, MemoryMeter
from reports.csv_report import write_csv_report
from reports.json_report import write_json_report
from utils import mean_or_zero

logger = logging.getLogger(__name__)

# excluded from determinism comparisons
TIMING_FIELDS = ("throughput", "forward_seconds", "baseline_throughput", "baseline_forward_seconds")


class LayerReport(BaseModel):
    layer: int
    mean_kept_length: float
    mean_length_post_prune: float
    mean_pruned_fraction: float
    mean_score_sigma: Optional[float] = None
    mha_flops: int
    ffnn_flops: int
    other_flops: int
    analytical_mha_flops: int
    analytical_ffnn_flops: int


class ExperimentReport(BaseModel):
    config: dict[str, Any]
    layers: list[LayerReport]
    items: int
    analytical_flops: int
    analytical_flops_split: int
    baseline_analytical_flops: int
    empirical_flops: int
    empirical_mha_flops: int
    empirical_ffnn_flops: int
    empirical_other_flops: int
    baseline_empirical_flops: int
    speedup_ratio: float
    peak_memory_bytes: int
    baseline_peak_memory_bytes: int
    class_histogram: dict[str, int]
    throughput: float
    forward_seconds: float
    baseline_throughput: float
    baseline_forward_seconds: float

    def mean_lengths(self) -> list[float]:
        return [layer.mean_kept_length for layer in self.layers]

    def without_timing(self) -> dict[str, Any]:
        return self.model_dump(exclude=set(TIMING_FIELDS))


@dataclass
class PassResult:
    """Everything one pass over the corpus produced, folded in batch order."""

    ledger: FlopLedger = field(default_factory=FlopLedger)
    meter: MemoryMeter = field(default_factory=MemoryMeter)
    lengths_in: list[list[int]] = field(default_factory=list)
    lengths_post: list[list[int]] = field(default_factory=list)
    # [layer] -> (pruned fraction, sigma) per pruned sequence
    prune_fractions: dict[int, list[float]] = field(default_factory=dict)
    prune_sigmas: dict[int, list[float]] = field(default_factory=dict)
    classes: Counter = field(default_factory=Counter)
    forward_seconds: float = 0.0

    @property
    def items(self) -> int:
        return len(self.lengths_in)

    def fold(self, other: "PassResult") -> None:
        self.ledger.merge(other.ledger)
        self.meter.merge(other.meter)
        self.lengths_in.extend(other.lengths_in)
        self.lengths_post.extend(other.lengths_post)
        for layer, vals in other.prune_fractions.items():
            self.prune_fractions.setdefault(layer, []).extend(vals)
        for layer, vals in other.prune_sigmas.items():
            self.prune_sigmas.setdefault(layer, []).extend(vals)
        self.classes.update(other.classes)


def collate(
    batch: Sequence[TokenSequence],
    pad_to_max_len: bool,
    special: SpecialIds = SpecialIds(),
) -> list[TokenSequence]:
    if pad_to_max_len:
        return list(batch)
    width = max(s.n_valid for s in batch)
    return [s.padded_to(width, special.pad) for s in batch]


def _run_batch(
    batch: Sequence[TokenSequence],
    weights: EncoderWeights,
    dims: ModelDims,
    prune_cfg: PruneConfig,
    pad_to_max_len: bool,
) -> PassResult:
    result = PassResult()
    seqs = collate(batch, pad_to_max_len)
    out = encoder_forward(seqs, weights, dims, prune_cfg, result.ledger, result.meter)
    logits = classify(out.cls_vectors, weights.head, result.ledger)

    result.lengths_in = out.lengths_in
    result.lengths_post = out.lengths_post_prune
    for layer_stats in out.prune_stats:
        for st in layer_stats:
            frac = st.pruned_count / st.valid_count if st.valid_count else 0.0
            result.prune_fractions.setdefault(st.layer, []).append(frac)
            if st.sigma is not None:
                result.prune_sigmas.setdefault(st.layer, []).append(st.sigma)
    result.classes.update(str(int(c)) for c in np.argmax(logits, axis=1))
    return result


def run_pass(
    sequences: Sequence[TokenSequence],
    weights: EncoderWeights,
    dims: ModelDims,
    prune_cfg: PruneConfig,
    batch_size: int,
    workers: int = 1,
    pad_to_max_len: bool = True,
) -> PassResult:
    if batch_size < 1:
        raise ContractViolation(f"batch_size must be >= 1, got {batch_size}")
    chunks = list(batched(sequences, batch_size))
    total = PassResult()

    def work(chunk):
        return _run_batch(chunk, weights, dims, prune_cfg, pad_to_max_len)

    start = time.perf_counter()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = []
        for i, chunk in enumerate(chunks, start=1):
            results.append(work(chunk))
            logger.debug("Batch %d/%d done", i, len(chunks))
    total.forward_seconds = time.perf_counter() - start

    for r in results:
        total.fold(r)
    return total


def _analytical(lengths_in: list[list[int]], lengths_post: list[list[int]], dims: ModelDims) -> tuple[int, int]:
    full = sum(model_total(trace, dims) for trace in lengths_in)
    split = sum(model_total_split(pre, post, dims) for pre, post in zip(lengths_in, lengths_post))
    return full, split


def build_report(
    result: PassResult,
    baseline: PassResult,
    dims: ModelDims,
    config_echo: dict[str, Any],
) -> ExperimentReport:
    n_items = result.items
    per_layer = result.ledger.by_layer()
    layers = []
    for layer in range(dims.layers):
        lens_in = [seq[layer] for seq in result.lengths_in]
        lens_post = [seq[layer] for seq in result.lengths_post]
        counts = per_layer.get(layer, {b: 0 for b in Block})
        sigmas = result.prune_sigmas.get(layer)
        layers.append(LayerReport(
            layer=layer,
            mean_kept_length=mean_or_zero(lens_in),
            mean_length_post_prune=mean_or_zero(lens_post),
            mean_pruned_fraction=mean_or_zero(result.prune_fractions.get(layer, [])),
            mean_score_sigma=mean_or_zero(sigmas) if sigmas else None,
            mha_flops=counts[Block.MHA],
            ffnn_flops=counts[Block.FFNN],
            other_flops=counts[Block.OTHER],
            analytical_mha_flops=sum(flops_mha(n, dims).paper_total for n in lens_in),
            analytical_ffnn_flops=sum(flops_ffnn(n, dims) for n in lens_post),
        ))

    analytical, analytical_split = _analytical(result.lengths_in, result.lengths_post, dims)
    baseline_analytical, _ = _analytical(baseline.lengths_in, baseline.lengths_post, dims)
    empirical = result.ledger.total()
    baseline_empirical = baseline.ledger.total()

    return ExperimentReport(
        config=config_echo,
        layers=layers,
        items=n_items,
        analytical_flops=analytical,
        analytical_flops_split=analytical_split,
        baseline_analytical_flops=baseline_analytical,
        empirical_flops=empirical,
        empirical_mha_flops=result.ledger[Block.MHA],
        empirical_ffnn_flops=result.ledger[Block.FFNN],
        empirical_other_flops=result.ledger[Block.OTHER],
        baseline_empirical_flops=baseline_empirical,
        speedup_ratio=baseline_empirical / empirical if empirical else 1.0,
        peak_memory_bytes=result.meter.peak,
        baseline_peak_memory_bytes=baseline.meter.peak,
        class_histogram=dict(sorted(result.classes.items())),
        throughput=n_items / result.forward_seconds if result.forward_seconds > 0 else 0.0,
        forward_seconds=result.forward_seconds,
        baseline_throughput=(
            baseline.items / baseline.forward_seconds if baseline.forward_seconds > 0 else 0.0
        ),
        baseline_forward_seconds=baseline.forward_seconds,
    )


def run_experiment(
    corpus: Corpus,
    weights: EncoderWeights,
    dims: ModelDims,
    prune_cfg: PruneConfig,
    batch_size: int,
    settings: Optional[HarnessSettings] = None,
    baseline: Optional[PassResult] = None,
) -> ExperimentReport:
    """
    Run the corpus through the encoder under `prune_cfg`. A no-prune baseline
    pass supplies the speedup denominator; pass one in to reuse it.
    """
    settings = settings or HarnessSettings(batch_size=batch_size)
    sequences = encode_corpus(corpus, dims)
    logger.info(
        "Running %d items: schedule=%s alpha=%s merge=%s batch_size=%d",
        len(sequences), prune_cfg.schedule.value, prune_cfg.alpha, prune_cfg.merge, batch_size,
    )
    result = run_pass(
        sequences, weights, dims, prune_cfg, batch_size, settings.workers, settings.pad_to_max_len
    )
    if prune_cfg.schedule == Schedule.NONE:
        baseline = result
    elif baseline is None:
        logger.info("Running no-prune baseline")
        baseline = run_baseline(corpus, weights, dims, batch_size, settings)

    config_echo = {
        "dims": dims.model_dump(),
        "prune": prune_cfg.model_dump(mode="json"),
        "batch_size": batch_size,
        "seed": settings.seed,
        "workers": settings.workers,
        "pad_to_max_len": settings.pad_to_max_len,
        "mode": corpus.mode.value,
    }
    report = build_report(result, baseline, dims, config_echo)
    logger.info(
        "Finished: empirical %d FLOPs, speedup x%.3f, throughput %.2f samples/s",
        report.empirical_flops, report.speedup_ratio, report.throughput,
    )
    return report


def run_baseline(
    corpus: Corpus,
    weights: EncoderWeights,
    dims: ModelDims,
    batch_size: int,
    settings: Optional[HarnessSettings] = None,
) -> PassResult:
    settings = settings or HarnessSettings(batch_size=batch_size)
    return run_pass(
        encode_corpus(corpus, dims), weights, dims, PruneConfig(schedule=Schedule.NONE),
        batch_size, settings.workers, settings.pad_to_max_len,
    )


def emit_report(
    report: ExperimentReport,
    path: str,
    fmt: Union[ReportFormat, str] = ReportFormat.JSON,
) -> None:
    fmt = ReportFormat(fmt)
    try:
        if fmt == ReportFormat.CSV:
            write_csv_report(report, path)
        else:
            write_json_report(report, path)
    except OSError as e:
        raise ReportWriteError(path, e) from e
    logger.info("Report written to %s (%s)", path, fmt.value)
