import math

import numpy as np
import pytest

from drowse.baselines import (
    approximate_entropy,
    extract_features,
    feature_matrix,
    fit_classifier,
    four_entropies,
    fuzzy_entropy,
    loso_accuracies,
    power_ratios,
    predict_classifier,
    ratios_from_bands,
    relative_powers,
    sample_entropy,
    spectral_entropy,
    welch_psd,
    write_features_csv,
)
from drowse.dataio import generate_synthetic
from drowse.numerics import Rng

T384 = np.arange(384) / 128.0


def tone(freq_hz, amp=1.0, phase=0.0):
    return amp * np.sin(2 * np.pi * freq_hz * T384 + phase)


# Brute-force oracles: explicit per-template loops, shared Chebyshev helper.

def _window(x, i, mm):
    return x[i:i + mm]


def _cheb_row(x, i, mm, count):
    t = _window(x, i, mm)
    return np.array([np.max(np.abs(t - _window(x, j, mm))) for j in range(count)])


def apen_oracle(x, m=2, r=None):
    x = np.asarray(x, dtype=np.float64)
    sd = float(x.std())
    if sd == 0.0:
        return 0.0
    r = 0.2 * sd if r is None else r

    def phi(mm):
        count = x.size - mm + 1
        logs = []
        for i in range(count):
            d = _cheb_row(x, i, mm, count)
            logs.append(math.log(np.count_nonzero(d <= r) / count))
        return float(np.mean(logs))

    return phi(m) - phi(m + 1)


def sampen_oracle(x, m=2, r=None):
    x = np.asarray(x, dtype=np.float64)
    sd = float(x.std())
    if sd == 0.0:
        return 0.0
    r = 0.2 * sd if r is None else r
    count = x.size - m

    def pairs(mm):
        total = 0
        for i in range(count):
            d = _cheb_row(x, i, mm, count)
            total += np.count_nonzero(d <= r) - 1  # drop self
        return total

    b = pairs(m)
    a = pairs(m + 1)
    return -math.log(max(a, 0.5) / max(b, 0.5))


def fuzzyen_oracle(x, m=2, r=None, width=2):
    x = np.asarray(x, dtype=np.float64)
    sd = float(x.std())
    if sd == 0.0:
        return 0.0
    r = 0.2 * sd if r is None else r
    count = x.size - m

    def phi(mm):
        total = 0.0
        for i in range(count):
            ti = _window(x, i, mm) - _window(x, i, mm).mean()
            for j in range(count):
                if i == j:
                    continue
                tj = _window(x, j, mm) - _window(x, j, mm).mean()
                d = float(np.max(np.abs(ti - tj)))
                total += math.exp(-(d ** width) / r)
        return total / (count * (count - 1))

    return math.log(phi(m)) - math.log(phi(m + 1))


class TestWelch:
    def test_tone_mass_concentrated(self):
        freqs, psd = welch_psd(tone(10.0))
        mass = psd[(freqs >= 9) & (freqs <= 11)].sum()
        assert mass / psd.sum() >= 0.95

    def test_white_noise_roughly_flat(self):
        x = Rng(41).normal((384,))
        freqs, psd = welch_psd(x)
        band = psd[(freqs >= 2) & (freqs <= 60)]
        chunk_means = band[: 6 * (band.size // 6)].reshape(6, -1).mean(axis=1)
        assert chunk_means.max() / chunk_means.min() < 3.0

    def test_two_tone_peaks(self):
        freqs, psd = welch_psd(tone(5.0) + tone(20.0))
        top2 = set(freqs[np.argsort(psd)[-2:]])
        assert top2 == {5.0, 20.0}

    def test_wrong_length(self):
        with pytest.raises(ValueError, match="384"):
            welch_psd(np.zeros(256))


class TestRelativePowers:
    def test_alpha_tone(self):
        rel = relative_powers(tone(10.0))
        assert rel[2] >= 0.95

    def test_delta_tone(self):
        rel = relative_powers(tone(2.0))
        assert rel[0] >= 0.95

    def test_sums_to_one(self):
        rng = Rng(42)
        for _ in range(20):
            rel = relative_powers(rng.normal((384,)))
            assert rel.sum() == pytest.approx(1.0, abs=1e-9)
            assert np.all(rel >= 0)

    def test_zero_signal_rejected(self):
        with pytest.raises(ValueError, match="power"):
            relative_powers(np.zeros(384))


class TestPowerRatios:
    def test_arithmetic(self):
        np.testing.assert_allclose(ratios_from_bands(np.array([0.0, 1.0, 2.0, 4.0])),
                                   [0.75, 0.5, 0.5, 0.25])
        np.testing.assert_allclose(ratios_from_bands(np.array([5.0, 1.0, 1.0, 1.0])),
                                   [2.0, 1.0, 1.0, 1.0])

    def test_pure_beta_signal(self):
        ratios = power_ratios(tone(25.0))
        assert np.all(ratios < 0.05)

    def test_zero_denominator_floored(self):
        out = ratios_from_bands(np.array([0.0, 1.0, 0.0, 0.0]))
        assert np.all(np.isfinite(out))


class TestSpectralEntropy:
    def test_tone_near_degenerate(self):
        assert spectral_entropy(tone(10.0)) <= 0.3

    def test_white_noise_near_uniform(self):
        assert spectral_entropy(Rng(43).normal((384,))) >= 0.9

    def test_two_tone_between_ideal_and_noise(self):
        # idealized two-bin distribution over the 30-bin band
        p = np.array([0.5, 0.5])
        ideal = -np.sum(p * np.log(p)) / np.log(30)
        assert ideal == pytest.approx(math.log(2) / math.log(30))
        one = spectral_entropy(tone(5.0))
        two = spectral_entropy(tone(5.0) + tone(20.0))
        # window leakage spreads each peak over a few bins, so the measured
        # value sits above the ideal two-bin entropy but well below noise
        assert ideal < two < 0.6
        assert one < two

    def test_zero_power_rejected(self):
        with pytest.raises(ValueError, match="power"):
            spectral_entropy(np.zeros(384))


class TestEntropies:
    def test_constant_signals(self):
        x = np.full(60, 2.5)
        assert approximate_entropy(x) == 0.0
        assert sample_entropy(x) == 0.0
        assert fuzzy_entropy(x) == 0.0

    def test_alternating_sampen_zero(self):
        x = np.tile([1.0, -1.0], 20)
        assert sample_entropy(x) == pytest.approx(0.0, abs=1e-12)
        assert sample_entropy(x) == pytest.approx(sampen_oracle(x), abs=1e-12)

    def test_matches_oracles_on_random_signals(self):
        rng = Rng(44)
        for _ in range(10):
            x = rng.normal((50,))
            assert approximate_entropy(x) == pytest.approx(apen_oracle(x), abs=1e-10)
            assert sample_entropy(x) == pytest.approx(sampen_oracle(x), abs=1e-10)
            assert fuzzy_entropy(x) == pytest.approx(fuzzyen_oracle(x), abs=1e-10)

    def test_sine_more_regular_than_noise(self):
        t = np.arange(100) / 100.0
        sine = np.sin(2 * np.pi * 5.0 * t)
        noise = Rng(45).normal((100,))
        noise *= sine.std() / noise.std()
        assert approximate_entropy(sine) < approximate_entropy(noise)

    def test_fuzzy_entropy_decreases_with_r(self):
        x = Rng(46).normal((80,))
        r = 0.2 * float(x.std())
        assert fuzzy_entropy(x, r=r) > fuzzy_entropy(x, r=2 * r)

    def test_sampen_zero_match_fallback(self):
        x = Rng(47).normal((40,))
        got = sample_entropy(x, r=1e-12)
        assert np.isfinite(got)
        assert got == pytest.approx(sampen_oracle(x, r=1e-12), abs=1e-10)

    def test_too_short(self):
        with pytest.raises(ValueError, match="at least"):
            sample_entropy(np.zeros(3))

    def test_four_entropies_vector(self):
        values = four_entropies(tone(10.0) + 0.1 * Rng(48).normal((384,)))
        assert values.shape == (4,)
        assert np.all(np.isfinite(values))


class TestFeatureDispatch:
    def test_kinds(self):
        x = tone(10.0) + 0.1 * Rng(49).normal((384,))
        np.testing.assert_array_equal(extract_features(x, "relative_power"),
                                      relative_powers(x))
        np.testing.assert_array_equal(extract_features(x, "power_ratio"),
                                      power_ratios(x))
        with pytest.raises(ValueError, match="unknown feature"):
            extract_features(x, "wavelets")

    def test_permutation_equivariance(self):
        data = generate_synthetic(2, 10, 6).data
        perm = Rng(50).permutation(data.shape[0])
        a = feature_matrix(data, "relative_power")[perm]
        b = feature_matrix(data[perm], "relative_power")
        np.testing.assert_array_equal(a, b)

    def test_features_csv(self, tmp_path):
        data = generate_synthetic(2, 10, 7)
        features = feature_matrix(data.data, "relative_power")
        path = tmp_path / "features.csv"
        write_features_csv(features, data.labels, data.subjects, "relative_power", path)
        lines = path.read_text().splitlines()
        assert lines[0] == "# features=relative_power"
        assert lines[1] == "subject_id,label,f1,f2,f3,f4"
        assert len(lines) == 2 + len(data)


def clouds(n_per_class=40, distance=3.0, seed=51):
    rng = Rng(seed)
    a = rng.normal((n_per_class, 4), mean=0.0, std=0.5)
    b = rng.normal((n_per_class, 4), mean=distance, std=0.5)
    x = np.vstack([a, b])
    y = np.array([0] * n_per_class + [1] * n_per_class)
    return x, y


class TestClassifiers:
    def test_separated_clouds_all_kinds(self):
        x, y = clouds()
        for kind in ("lr", "lda", "qda", "gnb", "knn"):
            model = fit_classifier(kind, x, y)
            acc = float((predict_classifier(model, x) == y).mean())
            assert acc >= 0.95, kind

    def test_knn_k1_memorizes(self):
        x, y = clouds(n_per_class=15, distance=1.0)
        model = fit_classifier("knn", x, y, k=1)
        np.testing.assert_array_equal(predict_classifier(model, x), y)

    def test_knn_distance_tie_lower_index(self):
        x = np.array([[0.0, 0.0], [0.0, 0.0], [4.0, 4.0], [4.0, 4.0]])
        y = np.array([1, 0, 0, 1])
        model = fit_classifier("knn", x, y, k=1)
        # the query ties between training rows 0 and 1; row 0 wins
        assert predict_classifier(model, np.array([[0.0, 0.0]]))[0] == 1

    def test_gnb_posterior_tie_gives_zero(self):
        x = np.array([[0.0], [2.0], [0.0], [2.0]])
        y = np.array([0, 0, 1, 1])
        model = fit_classifier("gnb", x, y)
        np.testing.assert_array_equal(predict_classifier(model, np.array([[1.0], [0.0]])),
                                      [0, 0])

    def test_lda_imbalance_shifts_centroid_prediction(self):
        # a query at the training centroid standardizes to exactly zero, and
        # duplicating one class pulls both prior and geometry its way there
        rng = Rng(52)
        half = rng.normal((20, 4), mean=2.0, std=0.7)
        for dup in (0, 1):
            extra = half if dup == 0 else -half
            x = np.vstack([half, -half, extra])
            y = np.array([0] * 20 + [1] * 20 + [dup] * 20)
            model = fit_classifier("lda", x, y)
            assert predict_classifier(model, model.feat_mean[None, :])[0] == dup

    def test_fit_errors(self):
        x, y = clouds(n_per_class=10)
        with pytest.raises(ValueError, match="single class"):
            fit_classifier("lda", x, np.zeros_like(y))
        with pytest.raises(ValueError, match="unknown classifier"):
            fit_classifier("svm", x, y)
        with pytest.raises(ValueError, match="2 samples per class"):
            fit_classifier("lda", x[:11], y[:11])

    def test_dimension_mismatch(self):
        x, y = clouds(n_per_class=10)
        model = fit_classifier("lr", x, y)
        with pytest.raises(ValueError, match="expected 4 features"):
            predict_classifier(model, np.zeros((2, 3)))

    def test_deterministic(self):
        x, y = clouds()
        q = Rng(53).normal((7, 4))
        for kind in ("lr", "lda", "qda", "gnb", "knn"):
            a = predict_classifier(fit_classifier(kind, x, y), q)
            b = predict_classifier(fit_classifier(kind, x, y), q)
            np.testing.assert_array_equal(a, b)


class TestBaselineLoso:
    def test_relative_power_lda_on_synthetic(self):
        data = generate_synthetic(4, 25, 9)
        features = feature_matrix(data.data, "relative_power")
        subject_ids, accs = loso_accuracies(features, data.labels, data.subjects, "lda")
        assert subject_ids == [1, 2, 3, 4]
        assert accs.shape == (4,)
        assert accs.mean() >= 0.8

    def test_single_subject_rejected(self):
        with pytest.raises(ValueError, match="2 subjects"):
            loso_accuracies(np.zeros((4, 4)), [0, 1, 0, 1], [1, 1, 1, 1], "lda")
