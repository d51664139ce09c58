import math

import numpy as np
import pytest

from errors import ContractViolation
from numerics import (
    OUTSIDE_LAYERS,
    Block,
    FlopLedger,
    MemoryMeter,
    add_bias,
    gelu,
    layer_norm,
    masked_mean_std,
    matmul,
    seeded_random_matrix,
    softmax_masked,
)


def m(rows):
    return np.asarray(rows, dtype=np.float32)


class TestMatmul:
    def test_rule_2mnl_minus_ml(self):
        ledger = FlopLedger()
        out = matmul(np.ones((2, 3), np.float32), np.ones((3, 4), np.float32), ledger, Block.MHA)
        assert out.shape == (2, 4)
        assert ledger[Block.MHA] == 40

    def test_identity(self, rng):
        x = rng.standard_normal((3, 3)).astype(np.float32)
        ledger = FlopLedger()
        np.testing.assert_array_equal(matmul(np.eye(3, dtype=np.float32), x, ledger), x)
        assert ledger.total() == 45

    def test_hand_product(self):
        ledger = FlopLedger()
        out = matmul(m([[1, 2], [3, 4]]), m([[5], [6]]), ledger, Block.FFNN)
        np.testing.assert_array_equal(out, m([[17], [39]]))
        assert ledger[Block.FFNN] == 6
        assert out.dtype == np.float32

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ContractViolation, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(np.ones((2, 3), np.float32), np.ones((2, 3), np.float32))

    def test_ledger_sums_exactly(self, rng):
        ledger = FlopLedger()
        expected = 0
        for _ in range(20):
            mm, n, l = (int(v) for v in rng.integers(1, 9, size=3))
            matmul(np.ones((mm, n), np.float32), np.ones((n, l), np.float32), ledger, Block.MHA)
            expected += 2 * mm * n * l - mm * l
        assert ledger.total() == expected
        assert isinstance(ledger.total(), int)

    def test_associative(self, rng):
        a = rng.standard_normal((3, 4)).astype(np.float32)
        b = rng.standard_normal((4, 5)).astype(np.float32)
        c = rng.standard_normal((5, 2)).astype(np.float32)
        np.testing.assert_allclose(
            matmul(matmul(a, b), c), matmul(a, matmul(b, c)), rtol=1e-4, atol=1e-5
        )


class TestSoftmaxMasked:
    def test_uniform_row(self):
        out = softmax_masked(m([[0, 0, 0]]), [1, 1, 1])
        np.testing.assert_allclose(out, [[1 / 3] * 3], atol=1e-7)

    def test_overflow_safe(self):
        out = softmax_masked(m([[1000, 0]]), [1, 1])
        np.testing.assert_allclose(out, [[1.0, 0.0]], atol=1e-6)
        assert np.all(np.isfinite(out))

    def test_ln2(self):
        out = softmax_masked(m([[math.log(2), 0]]), [1, 1])
        np.testing.assert_allclose(out, [[2 / 3, 1 / 3]], atol=1e-6)

    def test_masked_keys_exactly_zero(self, rng):
        scores = rng.standard_normal((6, 6)).astype(np.float32) * 10
        mask = np.array([1, 1, 0, 1, 0, 1])
        out = softmax_masked(scores, mask)
        assert np.all(out[:, mask == 0] == 0.0)
        np.testing.assert_allclose(out.astype(np.float64).sum(axis=1), 1.0, atol=1e-6)

    def test_all_masked_row_is_zero(self):
        out = softmax_masked(m([[1, 2, 3]]), [0, 0, 0])
        assert np.all(out == 0.0)

    def test_charges_two_per_element(self):
        ledger = FlopLedger()
        softmax_masked(np.zeros((3, 5), np.float32), np.ones(5), ledger, Block.MHA)
        assert ledger[Block.MHA] == 30

    def test_mask_length_checked(self):
        with pytest.raises(ContractViolation):
            softmax_masked(np.zeros((2, 3), np.float32), [1, 1])


class TestLayerNorm:
    ones = np.ones(3, np.float32)
    zeros = np.zeros(3, np.float32)

    def test_constant_row(self):
        out = layer_norm(m([[1, 1, 1]]), self.ones, self.zeros)
        np.testing.assert_array_equal(out, m([[0, 0, 0]]))

    def test_two_values(self):
        out = layer_norm(m([[1, 3]]), np.ones(2, np.float32), np.zeros(2, np.float32), 1e-12)
        np.testing.assert_allclose(out, [[-1, 1]], atol=1e-6)

    def test_bias_passthrough(self):
        out = layer_norm(m([[0, 0]]), np.ones(2, np.float32), np.full(2, 5, np.float32))
        np.testing.assert_array_equal(out, m([[5, 5]]))

    def test_normalised_rows(self, rng):
        x = rng.standard_normal((4, 16)).astype(np.float32) * 3 + 7
        out = layer_norm(x, np.ones(16, np.float32), np.zeros(16, np.float32)).astype(np.float64)
        np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-5)
        np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-5)

    def test_shift_invariant(self, rng):
        x = rng.standard_normal((4, 16)).astype(np.float32)
        g, b = np.ones(16, np.float32), np.zeros(16, np.float32)
        np.testing.assert_allclose(layer_norm(x + 4.5, g, b), layer_norm(x, g, b), atol=1e-5)

    def test_charges_other(self):
        ledger = FlopLedger()
        layer_norm(np.ones((2, 3), np.float32), self.ones, self.zeros, ledger=ledger)
        assert ledger[Block.OTHER] == 30
        assert ledger[Block.MHA] == 0

    def test_bad_params(self):
        with pytest.raises(ContractViolation):
            layer_norm(np.ones((2, 3), np.float32), np.ones(2, np.float32), self.zeros)
        with pytest.raises(ContractViolation):
            layer_norm(np.ones((2, 3), np.float32), self.ones, self.zeros, epsilon=0)


class TestGelu:
    def test_zero(self):
        assert gelu(m([[0.0]]))[0, 0] == 0.0

    def test_asymptotes(self):
        out = gelu(m([[20.0, -20.0]]))
        assert out[0, 0] == pytest.approx(20.0, abs=1e-4)
        assert out[0, 1] == pytest.approx(0.0, abs=1e-4)

    def test_charges_one_per_element(self):
        ledger = FlopLedger()
        gelu(np.zeros((4, 8), np.float32), ledger, Block.FFNN)
        assert ledger[Block.FFNN] == 32


class TestMaskedMeanStd:
    def test_population_sd(self):
        mean, sd, count = masked_mean_std([np.nan, 0.2, 0.5, 0.8, np.nan])
        assert mean == pytest.approx(0.5)
        assert sd == pytest.approx(math.sqrt(0.06), abs=1e-4)
        assert count == 3

    def test_single_value(self):
        assert masked_mean_std([np.nan, 0.7, np.nan]) == (0.7, 0.0, 1)

    def test_no_valid_scores(self):
        assert masked_mean_std([np.nan, np.nan]) is None

    def test_identical_values_give_exact_mean(self):
        mean, sd, _ = masked_mean_std([0.1] * 7)
        assert mean == 0.1
        assert sd == 0.0


class TestSeededRandomMatrix:
    def test_deterministic(self):
        a = seeded_random_matrix(5, 7, 11, 0.1)
        b = seeded_random_matrix(5, 7, 11, 0.1)
        assert a.tobytes() == b.tobytes()
        assert a.dtype == np.float32

    def test_seeds_differ(self):
        assert not np.array_equal(seeded_random_matrix(5, 7, 1, 0.1), seeded_random_matrix(5, 7, 2, 0.1))

    def test_bound(self):
        x = seeded_random_matrix(1000, 1000, 5, 0.02)
        assert np.abs(x).max() <= np.float32(0.02)

    def test_scale_must_be_positive(self):
        with pytest.raises(ContractViolation):
            seeded_random_matrix(2, 2, 0, 0.0)


class TestLedgerAndMeter:
    def test_layer_scoping(self):
        ledger = FlopLedger()
        with ledger.layer(2):
            add_bias(np.zeros((2, 3), np.float32), np.zeros(3, np.float32), ledger)
            ledger.charge(Block.MHA, 10)
        ledger.charge(Block.FFNN, 4)
        assert ledger.get(2, Block.OTHER) == 6
        assert ledger.get(2, Block.MHA) == 10
        assert ledger.get(OUTSIDE_LAYERS, Block.FFNN) == 4
        assert ledger.layers() == [2]
        assert ledger.total() == 20

    def test_merge_sums(self):
        a, b = FlopLedger(), FlopLedger()
        with a.layer(0):
            a.charge(Block.MHA, 5)
        with b.layer(0):
            b.charge(Block.MHA, 7)
        assert a.merge(b).get(0, Block.MHA) == 12

    def test_negative_charge_rejected(self):
        with pytest.raises(ContractViolation):
            FlopLedger().charge(Block.MHA, -1)

    def test_meter_peak(self):
        meter = MemoryMeter()
        a = np.zeros(10, np.float32)
        with meter.hold(a):
            with meter.scope() as track:
                track(np.zeros(5, np.float32))
                assert meter.current == 60
            assert meter.current == 40
        assert meter.current == 0
        assert meter.peak == 60
        other = MemoryMeter()
        other.allocate(100)
        assert meter.merge(other).peak == 100
