import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drowse.numerics import (
    Rng,
    dft_power,
    normalize_mean_std,
    paired_t_test,
    softmax,
    softmax_rows,
    student_t_sf2,
)


def student_t_p_oracle(t, df, steps=200_000):
    """Two-tailed p via brute-force Simpson integration of the t density."""
    lg = math.lgamma((df + 1) / 2.0) - math.lgamma(df / 2.0)
    norm = math.exp(lg) / math.sqrt(df * math.pi)

    def pdf(x):
        return norm * (1.0 + x * x / df) ** (-(df + 1) / 2.0)

    t = abs(t)
    xs = np.linspace(0.0, t, steps + 1)
    ys = np.array([pdf(x) for x in xs])
    h = t / steps
    integral = h / 3.0 * (ys[0] + ys[-1] + 4.0 * ys[1::2].sum() + 2.0 * ys[2:-1:2].sum())
    return 1.0 - 2.0 * integral


class TestSoftmax:
    def test_symmetry(self):
        np.testing.assert_allclose(softmax([0.0, 0.0]), [0.5, 0.5], rtol=0, atol=1e-15)

    def test_analytic(self):
        np.testing.assert_allclose(softmax([math.log(3.0), 0.0]), [0.75, 0.25], atol=1e-15)

    def test_no_overflow(self):
        p = softmax([1000.0, 0.0])
        assert np.all(np.isfinite(p))
        assert p[0] > 1.0 - 1e-12 and p[1] < 1e-12

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="non-finite"):
            softmax([np.nan, 0.0])
        with pytest.raises(ValueError):
            softmax([np.inf, 0.0])

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.floats(-50, 50), min_size=1, max_size=16),
        st.floats(-100, 100),
    )
    def test_shift_invariance(self, vals, c):
        v = np.array(vals)
        np.testing.assert_allclose(softmax(v + c), softmax(v), rtol=0, atol=1e-12)
        assert abs(softmax(v).sum() - 1.0) < 1e-12

    def test_rows_matches_vector(self):
        rng = Rng(3)
        m = rng.normal((5, 4))
        rows = softmax_rows(m)
        for i in range(5):
            np.testing.assert_allclose(rows[i], softmax(m[i]), atol=1e-15)


class TestDftPower:
    def test_pure_tone_lands_in_its_bin(self):
        t = np.arange(384) / 128.0
        x = np.cos(2 * np.pi * 10.0 * t)
        freqs, power = dft_power(x, 128.0)
        k = np.argmax(power)
        assert freqs[k] == pytest.approx(10.0)
        assert power[k] / power.sum() > 0.999

    def test_constant_after_mean_removal(self):
        x = np.full(128, 3.7)
        _, power = dft_power(x - x.mean(), 128.0)
        assert np.all(power < 1e-20)

    def test_parseval_random(self):
        rng = Rng(11)
        for _ in range(50):
            n = rng.integers(2, 513)
            x = rng.normal((n,))
            _, power = dft_power(x, 100.0)
            ms = np.mean(x * x)
            assert abs(power.sum() - ms) <= 1e-9 * ms

    def test_too_short(self):
        with pytest.raises(ValueError):
            dft_power(np.array([1.0]), 10.0)


class TestNormalize:
    def test_two_point(self):
        np.testing.assert_allclose(normalize_mean_std([1.0, 3.0]), [-1.0, 1.0], atol=1e-15)

    def test_zero_variance_guard(self):
        np.testing.assert_array_equal(normalize_mean_std([5.0, 5.0, 5.0]), [0.0, 0.0, 0.0])

    def test_moments(self):
        rng = Rng(4)
        v = rng.normal((257,), mean=3.0, std=7.0)
        out = normalize_mean_std(v)
        assert abs(out.mean()) < 1e-10
        assert abs(np.sqrt(np.mean(out**2)) - 1.0) < 1e-10

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=64))
    def test_idempotent(self, vals):
        v = np.array(vals)
        once = normalize_mean_std(v)
        twice = normalize_mean_std(once)
        np.testing.assert_allclose(twice, once, rtol=0, atol=1e-10)


class TestPairedTTest:
    def test_zero_mean_difference(self):
        a = np.array([1.0, 0.0, 1.0, 0.0])
        b = np.array([0.0, 1.0, 0.0, 1.0])
        t, p = paired_t_test(a, b)
        assert t == pytest.approx(0.0, abs=1e-15)
        assert p == pytest.approx(1.0, abs=1e-12)

    def test_against_integration_oracle(self):
        # d = [1, 2, 3]: t = 2 / (1 / sqrt(3)) = 2*sqrt(3)
        a = np.array([2.0, 3.0, 4.0])
        b = np.array([1.0, 1.0, 1.0])
        t, p = paired_t_test(a, b)
        assert t == pytest.approx(2.0 * math.sqrt(3.0), abs=1e-12)
        assert p == pytest.approx(student_t_p_oracle(t, 2), abs=1e-8)
        assert p == pytest.approx(0.0741799, abs=1e-6)

    def test_more_dfs_match_oracle(self):
        rng = Rng(9)
        for n in (4, 7, 12, 30):
            a = rng.normal((n,), mean=0.3)
            b = rng.normal((n,))
            t, p = paired_t_test(a, b)
            assert p == pytest.approx(student_t_p_oracle(t, n - 1), abs=1e-7)

    def test_identical_vectors_degenerate(self):
        a = np.array([1.0, 2.0, 3.0])
        with pytest.raises(ValueError, match="zero-variance"):
            paired_t_test(a, a.copy())

    def test_constant_shift_degenerate(self):
        a = np.array([0.31, 0.52, 0.47, 0.66])
        with pytest.raises(ValueError, match="zero-variance"):
            paired_t_test(a, a - 0.05)

    def test_sf_symmetry(self):
        assert student_t_sf2(-2.5, 5) == pytest.approx(student_t_sf2(2.5, 5), abs=1e-15)


class TestRng:
    def test_equal_seeds_equal_streams(self):
        a, b = Rng(123456789), Rng(123456789)
        np.testing.assert_array_equal(a.raw64(1_000_000), b.raw64(1_000_000))

    def test_different_seeds_differ(self):
        assert not np.array_equal(Rng(1).raw64(64), Rng(2).raw64(64))

    def test_uniform_range_and_determinism(self):
        u = Rng(7).uniform((10_000,))
        assert np.all(u >= 0.0) and np.all(u < 1.0)
        np.testing.assert_array_equal(u, Rng(7).uniform((10_000,)))

    def test_normal_moments(self):
        z = Rng(42).normal((200_000,))
        assert abs(z.mean()) < 0.01
        assert abs(z.std() - 1.0) < 0.01

    def test_permutation_is_a_permutation(self):
        p = Rng(5).permutation(1000)
        assert np.array_equal(np.sort(p), np.arange(1000))

    def test_split_deterministic_and_disjoint(self):
        root = Rng(99)
        a = root.split("fold", 3, "repeat", 1)
        b = Rng(99).split("fold", 3, "repeat", 1)
        c = Rng(99).split("fold", 3, "repeat", 2)
        np.testing.assert_array_equal(a.raw64(100), b.raw64(100))
        assert not np.array_equal(Rng(99).split("fold", 3, "repeat", 1).raw64(100), c.raw64(100))

    def test_split_does_not_disturb_parent(self):
        a = Rng(17)
        first = a.raw64(10)
        b = Rng(17)
        b.split("x")
        np.testing.assert_array_equal(first, b.raw64(10))

    def test_integers_in_range(self):
        v = Rng(3).integers(5, 9, (1000,))
        assert v.min() >= 5 and v.max() <= 8
