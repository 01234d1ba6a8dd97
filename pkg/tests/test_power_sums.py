# tests/test_power_sums.py
import numpy as np
import pytest

from mlcov.core.exceptions import DimensionMismatchError, NonFiniteInputError
from mlcov.utils.power_sums import (PowerSums1, PowerSums2, PowerSums4, accumulate, accumulate1, accumulate2,
                                    accumulate4, from_samples, merge1, merge2, merge4)

PAIRS = [(1, 2), (2, 4), (3, 6), (4, 8)]


def _sums(ps):
    return {idx: float(ps.s(*idx)) for idx in ps.INDICES}


class TestAccumulate:

    def test_single_sample(self):
        ps = accumulate2(PowerSums2(), 2, 3)
        assert ps.n == 1
        assert ps.s(1, 1) == 6
        assert ps.s(2, 2) == 36
        assert ps.s(1, 0) == 2

    def test_zero_sample_only_increments_count(self):
        ps = accumulate2(PowerSums2(), 2, 3)
        before = _sums(ps)
        accumulate2(ps, 0, 0)
        assert ps.n == 2
        assert _sums(ps) == before

    def test_direct_summation(self):
        ps = PowerSums2()
        for x, y in PAIRS:
            accumulate2(ps, x, y)
        assert ps.s(1, 0) == 10
        assert ps.s(0, 1) == 20
        assert ps.s(1, 1) == 60

    def test_other_arities(self):
        one = accumulate1(PowerSums1(), 3.0)
        assert one.s(4) == 81
        four = accumulate4(PowerSums4(), 1.0, 2.0, 3.0, 4.0)
        assert four.s(1, 1, 1, 1) == 24
        assert four.s(0, 0, 2, 2) == 144
        assert accumulate(four, 1.0, 1.0, 1.0, 1.0).n == 2

    def test_quadrivariate_products(self, quadruples):
        ps = from_samples(PowerSums4, quadruples)
        for idx in PowerSums4.INDICES:
            expected = np.sum(np.prod(quadruples ** np.array(idx), axis=1))
            np.testing.assert_allclose(ps.s(*idx), expected, rtol=1e-12, atol=1e-12)

    def test_batch_matches_elementwise_scalars(self, rng):
        data = rng.normal(size=(25, 3))
        vector = PowerSums1(shape=3).add_batch(data)
        for k in range(3):
            scalar = from_samples(PowerSums1, data[:, k])
            for p in (1, 2, 3, 4):
                np.testing.assert_allclose(vector.s(p)[k], scalar.s(p), rtol=1e-12)

    def test_rejects_non_finite(self):
        ps = PowerSums2()
        with pytest.raises(NonFiniteInputError):
            ps.add(1.0, float("nan"))
        with pytest.raises(ValueError):
            ps.add(np.inf, 1.0)
        assert ps.n == 0

    def test_wrong_arity(self):
        with pytest.raises(DimensionMismatchError):
            PowerSums2().add(1.0)

    def test_unknown_index(self):
        with pytest.raises(DimensionMismatchError):
            PowerSums2().s(3, 0)


class TestShift:

    def test_sums_are_of_shifted_data(self, correlated_pairs):
        shift = np.array([10.0, -3.0])
        ps = from_samples(PowerSums2, correlated_pairs, shift=shift)
        centred = correlated_pairs - shift
        np.testing.assert_allclose(ps.s(2, 1), np.sum(centred[:, 0] ** 2 * centred[:, 1]), rtol=1e-12)

    def test_mean_restores_shift(self, correlated_pairs):
        ps = from_samples(PowerSums2, correlated_pairs, shift=[273.0, 273.0])
        np.testing.assert_allclose(ps.mean(0), correlated_pairs[:, 0].mean(), rtol=1e-12)
        np.testing.assert_allclose(ps.mean(1), correlated_pairs[:, 1].mean(), rtol=1e-12)

    def test_merge_requires_equal_shift(self):
        a = PowerSums1(shift=1.0).add(2.0)
        b = PowerSums1(shift=0.0).add(2.0)
        with pytest.raises(DimensionMismatchError):
            a.merge(b)


class TestMerge:

    def test_empty_is_identity(self):
        a = from_samples(PowerSums2, PAIRS)
        merged = merge2(PowerSums2(), a)
        assert merged.n == a.n
        assert _sums(merged) == _sums(a)

    def test_commutative(self, correlated_pairs):
        a = from_samples(PowerSums2, correlated_pairs[:15])
        b = from_samples(PowerSums2, correlated_pairs[15:])
        ab, ba = merge2(a, b), merge2(b, a)
        for idx in PowerSums2.INDICES:
            np.testing.assert_allclose(ab.s(*idx), ba.s(*idx), rtol=1e-14)

    def test_split_stream_equals_single_pass(self):
        merged = merge2(from_samples(PowerSums2, PAIRS[:2]), from_samples(PowerSums2, PAIRS[2:]))
        whole = from_samples(PowerSums2, PAIRS)
        assert merged.n == 4
        assert _sums(merged) == _sums(whole)

    def test_associative(self, rng):
        # 小整数数据的幂和是精确的，两种合并顺序应逐位相同
        data = rng.integers(-5, 6, size=(30, 4)).astype(float)
        a, b, c = (from_samples(PowerSums4, part) for part in (data[:9], data[9:20], data[20:]))
        left, right = merge4(merge4(a, b), c), merge4(a, merge4(b, c))
        assert left.n == right.n == 30
        for idx in PowerSums4.INDICES:
            np.testing.assert_array_equal(left.s(*idx), right.s(*idx))
        np.testing.assert_array_equal(left.s(2, 2, 0, 0), np.sum(data[:, 0] ** 2 * data[:, 1] ** 2))

    def test_merge_other_dimensions(self, quadruples):
        one = merge1(from_samples(PowerSums1, quadruples[:10, 0]), from_samples(PowerSums1, quadruples[10:, 0]))
        np.testing.assert_allclose(one.s(4), np.sum(quadruples[:, 0] ** 4), rtol=1e-12)
        four = merge4(from_samples(PowerSums4, quadruples[:7]), from_samples(PowerSums4, quadruples[7:]))
        np.testing.assert_allclose(four.s(1, 1, 1, 1), np.sum(np.prod(quadruples, axis=1)), rtol=1e-12)

    def test_merge_rejects_mixed_types(self):
        with pytest.raises(DimensionMismatchError):
            PowerSums1().merge(PowerSums2())

    def test_merge_leaves_inputs_untouched(self):
        a = from_samples(PowerSums1, [1.0, 2.0])
        b = from_samples(PowerSums1, [3.0])
        a.merge(b)
        assert a.n == 2 and a.s(1) == 3.0

    def test_compensated_summation(self):
        ps = PowerSums1()
        ps.add(1e16)
        for _ in range(10):
            ps.add_batch(np.ones(1))
        assert ps.s(1) == pytest.approx(1e16 + 10, abs=2)


def test_subset_selects_entries(rng):
    data = rng.normal(size=(12, 5))
    ps = PowerSums1(shape=5).add_batch(data)
    sub = ps.subset(np.array([4, 0]))
    np.testing.assert_allclose(sub.s(2), [np.sum(data[:, 4] ** 2), np.sum(data[:, 0] ** 2)], rtol=1e-12)
    assert sub.shape == (2,)
