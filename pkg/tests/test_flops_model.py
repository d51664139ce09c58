import pytest

from config import ModelDims
from errors import ContractViolation
from flops_model import (
    crossover_length,
    flops_difference,
    flops_ffnn,
    flops_mha,
    layer_breakdown,
    layer_total,
    model_total,
    model_total_split,
    solve_effective_length,
)


def test_mha_at_512(paper_dims):
    mha = flops_mha(512, paper_dims)
    assert mha.paper_total == 3_222_798_336
    assert mha.component_sum == mha.paper_total - 512 * 768


def test_mha_at_1(paper_dims):
    assert flops_mha(1, paper_dims).paper_total == 4_718_604


def test_mha_components_sum(paper_dims):
    mha = flops_mha(64, paper_dims)
    assert mha.component_sum == (
        mha.linear_proj + mha.scaled_dot_attn + mha.attn_times_v + mha.final_proj
    )


def test_mha_rejects_bad_lengths(paper_dims):
    with pytest.raises(ContractViolation):
        flops_mha(0, paper_dims)
    with pytest.raises(ContractViolation, match="max_len"):
        flops_mha(513, paper_dims)


def test_ffnn(paper_dims):
    assert flops_ffnn(512, paper_dims) == 4_831_444_992
    assert flops_ffnn(1, paper_dims) == 9_435_648
    with pytest.raises(ContractViolation):
        flops_ffnn(0, paper_dims)


def test_ffnn_general_width():
    dims = ModelDims(d_mha=4, h=2, d_ffnn=6, layers=1, max_len=8)
    # 2*n*d*f - n*f + n*f (gelu) + 2*n*f*d - n*d
    n = 3
    assert flops_ffnn(n, dims) == 2 * n * 4 * 6 + 2 * n * 6 * 4 - n * 4


def test_crossover(paper_dims):
    assert crossover_length(paper_dims) == 1530
    assert crossover_length(ModelDims(d_mha=1, h=1, d_ffnn=4, layers=1, max_len=2)) == 2


def test_crossover_boundary(paper_long_dims):
    assert flops_ffnn(1530, paper_long_dims) > flops_mha(1530, paper_long_dims).paper_total
    assert flops_ffnn(1531, paper_long_dims) < flops_mha(1531, paper_long_dims).paper_total


def test_difference_values(paper_dims):
    assert flops_difference(0, paper_dims) == 0
    assert flops_difference(1530, paper_dims) == 3_635_280
    assert flops_difference(1531, paper_dims) == -1_083_948
    with pytest.raises(ContractViolation):
        flops_difference(-1, paper_dims)


def test_difference_sign_sweep(paper_long_dims):
    cross = crossover_length(paper_long_dims)
    wrong = [
        n for n in range(1, 2001)
        if (flops_difference(n, paper_long_dims) > 0) != (n <= cross)
    ]
    assert wrong == []


def test_difference_is_concave(paper_long_dims):
    f = [flops_difference(n, paper_long_dims) for n in range(0, 2002)]
    second = [f[n + 1] - 2 * f[n] + f[n - 1] for n in range(1, 2001)]
    assert all(s < 0 for s in second)


def test_block_counts_strictly_increase(paper_long_dims):
    mha = [flops_mha(n, paper_long_dims).paper_total for n in range(1, 2001)]
    ffnn = [flops_ffnn(n, paper_long_dims) for n in range(1, 2001)]
    assert all(b > a for a, b in zip(mha, mha[1:]))
    assert all(b > a for a, b in zip(ffnn, ffnn[1:]))


@pytest.mark.parametrize("n", [1, 17, 512, 1530, 1531, 2048])
def test_difference_matches_blocks(paper_long_dims, n):
    expected = flops_ffnn(n, paper_long_dims) - flops_mha(n, paper_long_dims).paper_total
    assert flops_difference(n, paper_long_dims) == expected


def test_model_total(paper_dims):
    assert layer_total(512, paper_dims) == 8_054_243_328
    total = model_total([512] * 12, paper_dims)
    assert total == 96_650_919_936
    assert 96.4e9 <= total <= 96.9e9


def test_model_total_trace_length_checked(paper_dims):
    with pytest.raises(ContractViolation, match="one per layer"):
        model_total([512] * 11, paper_dims)


def test_halving_trace_is_cheaper(paper_dims):
    halved = [max(1, 512 >> i) for i in range(12)]
    assert model_total(halved, paper_dims) < model_total([512] * 12, paper_dims)


def test_split_estimator(paper_dims):
    pre = [512] * 12
    post = [256] * 12
    split = model_total_split(pre, post, paper_dims)
    assert split == 12 * (flops_mha(512, paper_dims).paper_total + flops_ffnn(256, paper_dims))
    assert model_total([256] * 12, paper_dims) < split < model_total(pre, paper_dims)
    assert model_total_split(pre, pre, paper_dims) == model_total(pre, paper_dims)


def test_effective_length(paper_dims):
    assert solve_effective_length(96_650_919_936, paper_dims) == 512
    assert solve_effective_length(96_650_919_935, paper_dims) == 511
    assert solve_effective_length(0, paper_dims) == 0


def test_effective_length_for_a_smaller_budget(paper_dims):
    n = solve_effective_length(48_290_000_000, paper_dims)
    assert 200 < n < 300
    assert model_total([n] * 12, paper_dims) <= 48_290_000_000
    assert model_total([n + 1] * 12, paper_dims) > 48_290_000_000


def test_layer_breakdown(paper_dims):
    row = layer_breakdown(512, paper_dims)
    assert row["mha_total"] == 3_222_798_336
    assert row["ffnn_total"] == 4_831_444_992
    assert row["difference"] == row["ffnn_total"] - row["mha_total"]
    assert row["crossover_length"] == 1530
