"""Conventional features and classical classifiers for comparison runs.

Three feature families (relative band powers, band-power ratios, four
entropies), all computed per 384-point sample, plus five classifiers
implemented directly (logistic regression, LDA, QDA, Gaussian naive Bayes,
k-nearest-neighbors).  Everything in this module is deterministic: no RNG,
so fit+predict is a pure function of the data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataio import SAMPLE_POINTS, SAMPLE_RATE_HZ
from .numerics import dft_power

SEGMENT = 128
BANDS = (("delta", 1.0, 4.0), ("theta", 4.0, 8.0),
         ("alpha", 8.0, 12.0), ("beta", 12.0, 30.0))

FEATURE_KINDS = ("relative_power", "power_ratio", "four_entropies")
CLASSIFIER_KINDS = ("lr", "lda", "qda", "gnb", "knn")

LR_ITERATIONS = 500
LR_STEP = 0.1
LR_L2 = 1e-4
SHRINKAGE = 1e-3
GNB_VAR_FLOOR = 1e-9
KNN_K = 5


# -- spectral features ---------------------------------------------------------

def welch_psd(x: np.ndarray) -> tuple:
    """Welch power spectral density of one sample.

    Five 128-point segments with 50% overlap, Hamming window, per-segment
    mean removal; one-sided density in units of power per Hz on a 1 Hz grid.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (SAMPLE_POINTS,):
        raise ValueError(f"expected a {SAMPLE_POINTS}-point sample, got {x.shape}")
    window = np.hamming(SEGMENT)
    scale = SEGMENT**2 / (SAMPLE_RATE_HZ * np.sum(window**2))
    psd = np.zeros(SEGMENT // 2 + 1)
    starts = range(0, SAMPLE_POINTS - SEGMENT + 1, SEGMENT // 2)
    freqs = None
    for start in starts:
        seg = x[start:start + SEGMENT]
        seg = (seg - seg.mean()) * window
        freqs, power = dft_power(seg, SAMPLE_RATE_HZ)
        psd += power * scale
    psd /= len(list(starts))
    return freqs, psd


def band_power(freqs: np.ndarray, psd: np.ndarray, lo: float, hi: float) -> float:
    """Trapezoidal integral of the PSD over [lo, hi] Hz."""
    mask = (freqs >= lo) & (freqs <= hi)
    return float(np.trapezoid(psd[mask], freqs[mask]))


def band_powers(x: np.ndarray) -> np.ndarray:
    freqs, psd = welch_psd(x)
    return np.array([band_power(freqs, psd, lo, hi) for _, lo, hi in BANDS])


def relative_powers(x: np.ndarray) -> np.ndarray:
    """Band powers normalized by the four-band total; sums to 1."""
    powers = band_powers(x)
    total = powers.sum()
    if total <= 0.0:
        raise ValueError("signal has no power in the 1-30 Hz bands")
    return powers / total


def ratios_from_bands(powers: np.ndarray) -> np.ndarray:
    """(theta+alpha)/beta, alpha/beta, (theta+alpha)/(alpha+beta), theta/beta."""
    _, theta, alpha, beta = powers
    floor = 1e-12
    return np.array([
        (theta + alpha) / max(beta, floor),
        alpha / max(beta, floor),
        (theta + alpha) / max(alpha + beta, floor),
        theta / max(beta, floor),
    ])


def power_ratios(x: np.ndarray) -> np.ndarray:
    return ratios_from_bands(band_powers(x))


def spectral_entropy(x: np.ndarray) -> float:
    """Normalized Shannon entropy of the 1-30 Hz PSD distribution, in [0, 1]."""
    freqs, psd = welch_psd(x)
    mask = (freqs >= 1.0) & (freqs <= 30.0)
    band = psd[mask]
    total = band.sum()
    if total <= 0.0:
        raise ValueError("zero spectral power in 1-30 Hz")
    p = band / total
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)) / np.log(band.size))


# -- entropies -----------------------------------------------------------------

def _validate_entropy_input(x: np.ndarray, m: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < m + 2:
        raise ValueError(f"need at least {m + 2} points, got {x.size}")
    return x


def _chebyshev_matrix(templates: np.ndarray) -> np.ndarray:
    return np.abs(templates[:, None, :] - templates[None, :, :]).max(axis=2)


def approximate_entropy(x: np.ndarray, m: int = 2, r: float | None = None) -> float:
    """ApEn: phi(m) - phi(m+1), Chebyshev distance, self-matches included."""
    x = _validate_entropy_input(x, m)
    sd = float(x.std())
    if sd == 0.0:
        return 0.0
    if r is None:
        r = 0.2 * sd

    def phi(mm):
        templates = sliding_window_view(x, mm)
        counts = (_chebyshev_matrix(templates) <= r).sum(axis=1)
        return np.mean(np.log(counts / templates.shape[0]))

    return float(phi(m) - phi(m + 1))


def sample_entropy(x: np.ndarray, m: int = 2, r: float | None = None) -> float:
    """SampEn: -ln(A/B) over n-m templates of both lengths, self-matches excluded.

    A zero match count is capped at 0.5 so the logarithm stays finite.
    """
    x = _validate_entropy_input(x, m)
    sd = float(x.std())
    if sd == 0.0:
        return 0.0
    if r is None:
        r = 0.2 * sd
    n_templates = x.size - m

    def matches(mm):
        templates = sliding_window_view(x, mm)[:n_templates]
        d = _chebyshev_matrix(templates)
        return (d <= r).sum() - n_templates  # drop the diagonal

    b = matches(m)
    a = matches(m + 1)
    return float(-np.log(max(a, 0.5) / max(b, 0.5)))


def fuzzy_entropy(x: np.ndarray, m: int = 2, r: float | None = None,
                  width: int = 2) -> float:
    """FuzzyEn: ln phi(m) - ln phi(m+1) with similarity exp(-d^width / r).

    Templates are baseline-removed (their own mean subtracted) before the
    Chebyshev distance; both template lengths use n-m templates.
    """
    x = _validate_entropy_input(x, m)
    sd = float(x.std())
    if sd == 0.0:
        return 0.0
    if r is None:
        r = 0.2 * sd
    n_templates = x.size - m

    def phi(mm):
        templates = sliding_window_view(x, mm)[:n_templates]
        templates = templates - templates.mean(axis=1, keepdims=True)
        d = _chebyshev_matrix(templates)
        mu = np.exp(-(d ** width) / r)
        return (mu.sum() - n_templates) / (n_templates * (n_templates - 1))

    return float(np.log(phi(m)) - np.log(phi(m + 1)))


def four_entropies(x: np.ndarray) -> np.ndarray:
    """(sample, fuzzy, approximate, spectral) entropy of one sample."""
    return np.array([
        sample_entropy(x),
        fuzzy_entropy(x),
        approximate_entropy(x),
        spectral_entropy(x),
    ])


# -- feature dispatch ----------------------------------------------------------

_FEATURE_FUNCS = {
    "relative_power": relative_powers,
    "power_ratio": power_ratios,
    "four_entropies": four_entropies,
}


def extract_features(x: np.ndarray, kind: str) -> np.ndarray:
    try:
        func = _FEATURE_FUNCS[kind]
    except KeyError:
        raise ValueError(f"unknown feature kind: {kind!r}") from None
    return func(x)


def feature_matrix(data: np.ndarray, kind: str) -> np.ndarray:
    """[n, 4] feature matrix for [n, 384] sample data."""
    return np.stack([extract_features(row.astype(np.float64), kind) for row in data])


def write_features_csv(features: np.ndarray, labels, subjects, kind: str, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# features={kind}\n")
        fh.write("subject_id,label,f1,f2,f3,f4\n")
        for i in range(features.shape[0]):
            values = ",".join(f"{v:.9g}" for v in features[i])
            fh.write(f"{int(subjects[i])},{int(labels[i])},{values}\n")


# -- classifiers ---------------------------------------------------------------

@dataclass
class ClassifierModel:
    kind: str
    feat_mean: np.ndarray
    feat_std: np.ndarray
    fitted: dict


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _shrunk(cov: np.ndarray) -> np.ndarray:
    d = cov.shape[0]
    return cov + (SHRINKAGE * np.trace(cov) / d) * np.eye(d)


def fit_classifier(kind: str, features: np.ndarray, labels, k: int = KNN_K) -> ClassifierModel:
    """Fit one of the five classifier kinds on standardized features."""
    if kind not in CLASSIFIER_KINDS:
        raise ValueError(f"unknown classifier kind: {kind!r}")
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != y.size:
        raise ValueError("features must be [n, d] with one label per row")
    counts = np.bincount(y, minlength=2)
    if np.unique(y).size < 2:
        raise ValueError("training data contains a single class")
    if counts.min() < 2:
        raise ValueError("need at least 2 samples per class")

    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    z = (x - mean) / std
    n, d = z.shape
    priors = counts / n
    fitted = {}

    if kind == "lr":
        w = np.zeros(d)
        b = 0.0
        for _ in range(LR_ITERATIONS):
            p = _sigmoid(z @ w + b)
            err = p - y
            w -= LR_STEP * (z.T @ err / n + 2.0 * LR_L2 * w)
            b -= LR_STEP * float(err.mean())
        fitted = {"w": w, "b": b}
    elif kind == "lda":
        mus = np.stack([z[y == c].mean(axis=0) for c in (0, 1)])
        centered = z - mus[y]
        cov = _shrunk(centered.T @ centered / (n - 2))
        inv = np.linalg.inv(cov)
        fitted = {"mus": mus, "inv": inv, "log_priors": np.log(priors)}
    elif kind == "qda":
        mus, invs, logdets = [], [], []
        for c in (0, 1):
            zc = z[y == c]
            mu = zc.mean(axis=0)
            cov = _shrunk((zc - mu).T @ (zc - mu) / (zc.shape[0] - 1))
            sign, logdet = np.linalg.slogdet(cov)
            if sign <= 0:
                raise ValueError("class covariance is not positive definite")
            mus.append(mu)
            invs.append(np.linalg.inv(cov))
            logdets.append(logdet)
        fitted = {"mus": np.stack(mus), "invs": np.stack(invs),
                  "logdets": np.array(logdets), "log_priors": np.log(priors)}
    elif kind == "gnb":
        mus = np.stack([z[y == c].mean(axis=0) for c in (0, 1)])
        variances = np.stack([np.maximum(z[y == c].var(axis=0), GNB_VAR_FLOOR)
                              for c in (0, 1)])
        fitted = {"mus": mus, "vars": variances, "log_priors": np.log(priors)}
    else:  # knn
        fitted = {"z": z, "y": y, "k": min(k, n)}

    return ClassifierModel(kind, mean, std, fitted)


def _scores(model: ClassifierModel, z: np.ndarray) -> np.ndarray:
    """Per-class decision scores [n, 2]; larger wins, ties go to class 0."""
    f = model.fitted
    if model.kind == "lr":
        margin = z @ f["w"] + f["b"]
        return np.column_stack([-margin, margin])
    if model.kind == "lda":
        scores = np.empty((z.shape[0], 2))
        for c in (0, 1):
            mu = f["mus"][c]
            scores[:, c] = z @ f["inv"] @ mu - 0.5 * mu @ f["inv"] @ mu + f["log_priors"][c]
        return scores
    if model.kind == "qda":
        scores = np.empty((z.shape[0], 2))
        for c in (0, 1):
            diff = z - f["mus"][c]
            mahal = np.einsum("ij,jk,ik->i", diff, f["invs"][c], diff)
            scores[:, c] = -0.5 * (f["logdets"][c] + mahal) + f["log_priors"][c]
        return scores
    if model.kind == "gnb":
        scores = np.empty((z.shape[0], 2))
        for c in (0, 1):
            var = f["vars"][c]
            log_lik = -0.5 * (np.log(2 * np.pi * var) + (z - f["mus"][c]) ** 2 / var)
            scores[:, c] = log_lik.sum(axis=1) + f["log_priors"][c]
        return scores
    raise ValueError(f"unknown classifier kind: {model.kind!r}")


def predict_classifier(model: ClassifierModel, features: np.ndarray) -> np.ndarray:
    """Deterministic label predictions for [n, d] features."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.feat_mean.size:
        raise ValueError(f"expected {model.feat_mean.size} features, got {x.shape[1]}")
    z = (x - model.feat_mean) / model.feat_std

    if model.kind == "knn":
        f = model.fitted
        labels = np.empty(z.shape[0], dtype=np.int64)
        for i in range(z.shape[0]):
            dist = np.sqrt(((f["z"] - z[i]) ** 2).sum(axis=1))
            # stable sort: equal distances resolve to the lower training index
            order = np.argsort(dist, kind="stable")[:f["k"]]
            votes = int(f["y"][order].sum())
            labels[i] = 1 if votes > order.size - votes else 0
        return labels

    scores = _scores(model, z)
    return (scores[:, 1] > scores[:, 0]).astype(np.int64)


def loso_accuracies(features: np.ndarray, labels, subjects, clf_kind: str,
                    k: int = KNN_K) -> tuple:
    """Leave-one-subject-out accuracy per subject for one feature matrix."""
    labels = np.asarray(labels, dtype=np.int64)
    subjects = np.asarray(subjects)
    subject_ids = sorted(int(s) for s in np.unique(subjects))
    if len(subject_ids) < 2:
        raise ValueError("leave-one-subject-out needs at least 2 subjects")
    accs = []
    for sid in subject_ids:
        test = subjects == sid
        model = fit_classifier(clf_kind, features[~test], labels[~test], k=k)
        pred = predict_classifier(model, features[test])
        accs.append(float((pred == labels[test]).mean()))
    return subject_ids, np.array(accs)
