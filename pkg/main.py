# main.py
from __future__ import annotations
from typing import Any, Optional, Sequence
import argparse
import logging
import sys

from config import (
    AppConfig,
    DIMS_PRESETS,
    HarnessSettings,
    ModelDims,
    PruneConfig,
    ReportFormat,
    Schedule,
    load_config,
)
from corpus import CorpusMode, load_corpus, write_synthetic_corpus, write_text_corpus
from encoder import EncoderWeights, init_weights
from errors import AlpineError
from flops_model import (
    crossover_length,
    flops_difference,
    flops_ffnn,
    flops_mha,
    model_total,
    solve_effective_length,
)
from harness import emit_report, run_experiment
from run_sweep import ACTIVE_VARIANTS, emit_sweep_table, run_sweep, with_alpha
from utils import format_flops
from weights import load_weights, save_weights

logger = logging.getLogger("alpine")

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"


def _setup_logging(level: str) -> None:
    logging.basicConfig(level=level.upper(), format=LOG_FORMAT, stream=sys.stdout, force=True)


def _add_dims_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dims", help=f"preset ({', '.join(DIMS_PRESETS)}) or 'custom'")
    p.add_argument("--d", type=int, help="hidden size (custom dims)")
    p.add_argument("--h", type=int, help="attention heads (custom dims)")
    p.add_argument("--d-ffnn", type=int, help="feed-forward width, default 4*d (custom dims)")
    p.add_argument("--layers", type=int, help="encoder layers (custom dims)")
    p.add_argument("--max-len", type=int, help="maximum sequence length (custom dims)")
    p.add_argument("--vocab", type=int, help="vocabulary size (custom dims)")


def _add_experiment_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--corpus", required=True, help="line-delimited JSON corpus")
    p.add_argument("--mode", choices=[m.value for m in CorpusMode], default=CorpusMode.SINGLE.value)
    p.add_argument("--alpha", type=float)
    p.add_argument("--merge", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--weights", help="weight archive base path (default: seeded init)")
    _add_dims_args(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alpine",
        description="Transformer encoder inference with attention-based token pruning and FLOP accounting.",
    )
    parser.add_argument("--config", help="JSON config file (default: ./alpine.json if present)")
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING, ...")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one pruning configuration and write a report")
    _add_experiment_args(run)
    run.add_argument("--schedule", choices=[s.value for s in Schedule])
    run.add_argument("--report", required=True, help="report output path")
    run.add_argument("--format", choices=[f.value for f in ReportFormat])
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="compare every schedule x merge variant")
    _add_experiment_args(sweep)
    sweep.add_argument("--out", required=True, help="comparison table (CSV)")
    sweep.set_defaults(func=cmd_sweep)

    flops = sub.add_parser("flops", help="analytical FLOP breakdown for one layer")
    flops.add_argument("--n", type=int, required=True)
    flops.add_argument("--d", type=int, default=768)
    flops.add_argument("--h", type=int, default=12)
    flops.add_argument("--d-ffnn", type=int)
    flops.add_argument("--layers", type=int, default=12)
    flops.add_argument("--target", type=float, help="solve for the constant length reaching this total")
    flops.set_defaults(func=cmd_flops)

    cross = sub.add_parser("crossover", help="largest n where the FFNN outweighs the MHA")
    cross.add_argument("--d", type=int, default=768)
    cross.add_argument("--h", type=int, default=12)
    cross.set_defaults(func=cmd_crossover)

    synth = sub.add_parser("synth", help="write a seeded synthetic corpus")
    synth.add_argument("--out", required=True)
    synth.add_argument("--count", type=int, default=200)
    synth.add_argument("--seed", type=int)
    synth.add_argument("--mode", choices=[m.value for m in CorpusMode], default=CorpusMode.SINGLE.value)
    synth.add_argument("--text", help="hash-tokenize the lines of this file instead")
    _add_dims_args(synth)
    synth.set_defaults(func=cmd_synth)

    initw = sub.add_parser("init-weights", help="write a seeded weight archive")
    initw.add_argument("--out", required=True)
    initw.add_argument("--seed", type=int)
    _add_dims_args(initw)
    initw.set_defaults(func=cmd_init_weights)
    return parser


def _given(**kwargs: Any) -> dict[str, Any]:
    return {k: v for k, v in kwargs.items() if v is not None}


def resolve_dims(args: argparse.Namespace, cfg: AppConfig) -> ModelDims:
    if args.dims is None:
        return cfg.resolved_dims()
    if args.dims != "custom":
        return ModelDims.preset(args.dims)
    if args.d is None or args.h is None:
        raise AlpineError("--dims custom needs at least --d and --h")
    base = cfg.resolved_dims()
    return ModelDims(
        d_mha=args.d,
        h=args.h,
        d_ffnn=args.d_ffnn or 4 * args.d,
        layers=args.layers or base.layers,
        max_len=args.max_len or base.max_len,
        vocab_size=args.vocab or base.vocab_size,
        num_classes=base.num_classes,
    )


def resolve_prune(args: argparse.Namespace, cfg: AppConfig) -> PruneConfig:
    return PruneConfig(**{
        **cfg.prune.model_dump(),
        **_given(alpha=args.alpha, merge=args.merge, schedule=getattr(args, "schedule", None)),
    })


def resolve_settings(args: argparse.Namespace, cfg: AppConfig) -> HarnessSettings:
    return HarnessSettings(**{
        **cfg.harness.model_dump(),
        **_given(
            batch_size=getattr(args, "batch_size", None),
            seed=args.seed,
            workers=getattr(args, "workers", None),
            report_format=getattr(args, "format", None),
        ),
    })


def _weights(args: argparse.Namespace, dims: ModelDims, settings: HarnessSettings) -> EncoderWeights:
    if args.weights:
        return load_weights(args.weights, dims)
    return init_weights(dims, settings.seed, settings.init_scale, settings.embedding_scale)


def cmd_run(args: argparse.Namespace, cfg: AppConfig) -> int:
    dims = resolve_dims(args, cfg)
    prune = resolve_prune(args, cfg)
    settings = resolve_settings(args, cfg)
    corpus = load_corpus(args.corpus, args.mode, dims.max_len, dims.vocab_size)
    report = run_experiment(
        corpus, _weights(args, dims, settings), dims, prune, settings.batch_size, settings
    )
    emit_report(report, args.report, settings.report_format)
    print(f"speedup x{report.speedup_ratio:.3f}  empirical {format_flops(report.empirical_flops)}"
          f"  baseline {format_flops(report.baseline_empirical_flops)}")
    return 0


def cmd_sweep(args: argparse.Namespace, cfg: AppConfig) -> int:
    dims = resolve_dims(args, cfg)
    prune = resolve_prune(args, cfg)
    settings = resolve_settings(args, cfg)
    corpus = load_corpus(args.corpus, args.mode, dims.max_len, dims.vocab_size)
    variants = with_alpha(ACTIVE_VARIANTS, prune.alpha)
    if args.merge is not None:
        variants = {k: v for k, v in variants.items() if v.schedule == Schedule.NONE or v.merge == args.merge}
    results = run_sweep(
        corpus, _weights(args, dims, settings), dims, variants, settings.batch_size, settings
    )
    emit_sweep_table(results, args.out)
    for name, report in results:
        print(f"{name:<12} speedup x{report.speedup_ratio:.3f}")
    return 0


def cmd_flops(args: argparse.Namespace, cfg: AppConfig) -> int:
    dims = ModelDims(
        d_mha=args.d,
        h=args.h,
        d_ffnn=args.d_ffnn or 4 * args.d,
        layers=args.layers,
        max_len=max(args.n, 2),
    )
    mha = flops_mha(args.n, dims)
    ffnn = flops_ffnn(args.n, dims)
    print(f"n={args.n} d={dims.d_mha} h={dims.h} d_ffnn={dims.d_ffnn}")
    print(f"MHA {mha.paper_total:,}")
    print(f"  linear_proj      {mha.linear_proj:,}")
    print(f"  scaled_dot_attn  {mha.scaled_dot_attn:,}")
    print(f"  attn_times_v     {mha.attn_times_v:,}")
    print(f"  final_proj       {mha.final_proj:,}")
    print(f"  component_sum    {mha.component_sum:,}")
    print(f"FFNN {ffnn:,}")
    print(f"FFNN - MHA {flops_difference(args.n, dims):,}")
    print(f"crossover {crossover_length(dims)}")
    print(f"model total ({dims.layers} layers) {model_total([args.n] * dims.layers, dims):,}")
    if args.target is not None:
        print(f"effective length {solve_effective_length(int(args.target), dims)}")
    return 0


def cmd_crossover(args: argparse.Namespace, cfg: AppConfig) -> int:
    dims = ModelDims(d_mha=args.d, h=args.h, d_ffnn=4 * args.d, layers=1, max_len=2)
    print(crossover_length(dims))
    return 0


def cmd_synth(args: argparse.Namespace, cfg: AppConfig) -> int:
    dims = resolve_dims(args, cfg)
    if args.text:
        written = write_text_corpus(args.text, args.out, dims)
    else:
        seed = args.seed if args.seed is not None else cfg.harness.seed
        written = write_synthetic_corpus(args.out, args.count, dims, seed, args.mode)
    print(f"{written} records written to {args.out}")
    return 0


def cmd_init_weights(args: argparse.Namespace, cfg: AppConfig) -> int:
    dims = resolve_dims(args, cfg)
    seed = args.seed if args.seed is not None else cfg.harness.seed
    weights = init_weights(dims, seed, cfg.harness.init_scale, cfg.harness.embedding_scale)
    manifest, blob = save_weights(weights, args.out)
    print(f"{manifest}\n{blob}")
    return 0


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse already printed usage
        return e.code if isinstance(e.code, int) else 2

    try:
        cfg = load_config(args.config, reload=True)
        _setup_logging(args.log_level or cfg.log_level)
        return args.func(args, cfg)
    except (AlpineError, OSError, ValueError) as e:
        logger.debug("Fatal error", exc_info=True)
        logger.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
