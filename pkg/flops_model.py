# flops_model.py
"""
Closed-form FLOP counts for one encoder layer, in exact integer arithmetic.

MHA at sequence length n (d = d_mha, h heads):
  linear projections   6 n d^2 - 3 n d
  scaled dot attention 2 n^2 d + h n^2     (QK^T plus 2 per softmax element)
  attention x V        2 n^2 d - n d
  output projection    2 n d^2 - n d
  stated total         8 n d^2 + 4 n^2 d - 4 n d + h n^2

The stated total is n*d above the sum of its parts. The stated total is the
canonical one; the component sum is kept as a labelled breakdown because it is
what an instrumented forward pass measures.

FFNN: 2 n d d_ffnn (first linear layer plus GELU) + 2 n d_ffnn d - n d, which
is 16 n d^2 - n d when d_ffnn = 4 d.
"""
from __future__ import annotations
from typing import Sequence

from pydantic import BaseModel

from config import ModelDims
from errors import ContractViolation


class MhaFlopBreakdown(BaseModel):
    n: int
    linear_proj: int
    scaled_dot_attn: int
    attn_times_v: int
    final_proj: int
    component_sum: int
    paper_total: int

    model_config = {"frozen": True}


def _check_length(n: int, dims: ModelDims | None = None) -> None:
    if n < 1:
        raise ContractViolation(f"sequence length must be >= 1, got {n}")
    if dims is not None and n > dims.max_len:
        raise ContractViolation(f"sequence length {n} exceeds max_len {dims.max_len}")


def flops_mha(n: int, dims: ModelDims) -> MhaFlopBreakdown:
    _check_length(n, dims)
    d, h = dims.d_mha, dims.h
    linear_proj = 6 * n * d * d - 3 * n * d
    scaled_dot_attn = 2 * n * n * d + h * n * n
    attn_times_v = 2 * n * n * d - n * d
    final_proj = 2 * n * d * d - n * d
    component_sum = linear_proj + scaled_dot_attn + attn_times_v + final_proj
    paper_total = 8 * n * d * d + 4 * n * n * d - 4 * n * d + h * n * n
    return MhaFlopBreakdown(
        n=n,
        linear_proj=linear_proj,
        scaled_dot_attn=scaled_dot_attn,
        attn_times_v=attn_times_v,
        final_proj=final_proj,
        component_sum=component_sum,
        paper_total=paper_total,
    )


def flops_ffnn(n: int, dims: ModelDims) -> int:
    _check_length(n)
    d, f = dims.d_mha, dims.d_ffnn
    first_layer = 2 * n * d * f  # matmul 2ndf - nf, plus nf for GELU
    second_layer = 2 * n * f * d - n * d
    return first_layer + second_layer


def crossover_length(dims: ModelDims) -> int:
    """Largest n for which the FFNN still costs more than the MHA."""
    d, h = dims.d_mha, dims.h
    return (8 * d * d + 3 * d) // (4 * d + h)


def flops_difference(n: int, dims: ModelDims) -> int:
    if n < 0:
        raise ContractViolation(f"sequence length must be >= 0, got {n}")
    d, h = dims.d_mha, dims.h
    return n * (8 * d * d + 3 * d) - n * n * (4 * d + h)


def layer_total(n: int, dims: ModelDims) -> int:
    return flops_mha(n, dims).paper_total + flops_ffnn(n, dims)


def _check_trace(trace: Sequence[int], dims: ModelDims, name: str = "trace") -> None:
    if len(trace) != dims.layers:
        raise ContractViolation(
            f"{name} has {len(trace)} entries, expected one per layer ({dims.layers})"
        )
    for n in trace:
        _check_length(n, dims)


def model_total(trace: Sequence[int], dims: ModelDims) -> int:
    """Every layer charged at the length entering it."""
    _check_trace(trace, dims)
    return sum(layer_total(n, dims) for n in trace)


def model_total_split(
    pre_trace: Sequence[int], post_trace: Sequence[int], dims: ModelDims
) -> int:
    """MHA charged at the pre-prune length, FFNN at the post-prune length."""
    _check_trace(pre_trace, dims, "pre_trace")
    _check_trace(post_trace, dims, "post_trace")
    return sum(
        flops_mha(pre, dims).paper_total + flops_ffnn(post, dims)
        for pre, post in zip(pre_trace, post_trace)
    )


def solve_effective_length(target_flops: int, dims: ModelDims) -> int:
    """
    Largest constant length n with model_total([n] * layers) <= target.
    0 when even n=1 is over the target. Not capped by max_len.
    """

    def total(n: int) -> int:
        return dims.layers * (
            8 * n * dims.d_mha**2
            + 4 * n * n * dims.d_mha
            - 4 * n * dims.d_mha
            + dims.h * n * n
            + flops_ffnn(n, dims)
        )

    if total(1) > target_flops:
        return 0
    lo, hi = 1, 2
    while total(hi) <= target_flops:
        lo, hi = hi, hi * 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if total(mid) <= target_flops:
            lo = mid
        else:
            hi = mid
    return lo


def layer_breakdown(n: int, dims: ModelDims) -> dict[str, int]:
    mha = flops_mha(n, dims)
    ffnn = flops_ffnn(n, dims)
    return {
        "n": n,
        "mha_linear_proj": mha.linear_proj,
        "mha_scaled_dot_attn": mha.scaled_dot_attn,
        "mha_attn_times_v": mha.attn_times_v,
        "mha_final_proj": mha.final_proj,
        "mha_component_sum": mha.component_sum,
        "mha_total": mha.paper_total,
        "ffnn_total": ffnn,
        "difference": flops_difference(n, dims),
        "crossover_length": crossover_length(dims),
    }
