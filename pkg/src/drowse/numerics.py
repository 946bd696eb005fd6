"""Deterministic numeric substrate: seeded RNG, softmax, DFT power, t-test.

Everything here is pure and reproducible: the generator is counter-based
(no platform RNG), so identical seeds give identical streams on every
platform, and the t-test p-value is computed in-repo via the regularized
incomplete beta function.
"""

from __future__ import annotations

import math

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)  # SplitMix64 increment
_MASK64 = 0xFFFFFFFFFFFFFFFF


def _mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer; a bijection on 64-bit words."""
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _key_words(key) -> list[int]:
    # Fold an int or str key into 64-bit words for stream derivation.
    if isinstance(key, (int, np.integer)):
        return [int(key) & _MASK64]
    if isinstance(key, str):
        raw = key.encode("utf-8")
        raw += b"\x00" * (-len(raw) % 8)
        return [int.from_bytes(raw[i : i + 8], "little") for i in range(0, len(raw), 8)] or [0]
    raise TypeError(f"rng split key must be int or str, got {type(key).__name__}")


class Rng:
    """Counter-based deterministic random generator (SplitMix64 stream).

    Draw i of a stream with seed s is ``mix64(s + GOLDEN * i)``, so the
    sequence depends only on (seed, draw index), never on platform state.
    Not suitable for cryptography. Single-owner: never share one instance
    between concurrent tasks; derive children with :meth:`split` instead.
    """

    def __init__(self, seed: int):
        self._seed = np.uint64(int(seed) & _MASK64)
        self._count = 0

    @property
    def seed(self) -> int:
        return int(self._seed)

    def raw64(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit words as a uint64 array."""
        if n < 0:
            raise ValueError("draw count must be non-negative")
        with np.errstate(over="ignore"):
            idx = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
            out = _mix64(self._seed + _GOLDEN * idx)
        self._count += int(n)
        return out

    def uniform(self, shape=None, low: float = 0.0, high: float = 1.0) -> np.ndarray | float:
        """Uniform draws in [low, high); scalar when shape is None."""
        n = 1 if shape is None else int(np.prod(shape))
        u = (self.raw64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        out = low + (high - low) * u
        return float(out[0]) if shape is None else out.reshape(shape)

    def normal(self, shape=None, mean: float = 0.0, std: float = 1.0):
        """Gaussian draws via Box-Muller; scalar when shape is None."""
        n = 1 if shape is None else int(np.prod(shape))
        m = (n + 1) // 2
        # u1 in (0, 1] so the log never sees zero.
        u1 = ((self.raw64(m) >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (self.raw64(m) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        out = mean + std * z[:n]
        return float(out[0]) if shape is None else out.reshape(shape)

    def integers(self, low: int, high: int, shape=None):
        """Integer draws in [low, high); scalar when shape is None.

        Uses the floor-of-uniform construction; the O(range/2^53) bias is
        irrelevant at the ranges used here.
        """
        if high <= low:
            raise ValueError("empty integer range")
        n = 1 if shape is None else int(np.prod(shape))
        u = (self.raw64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        out = low + np.floor(u * (high - low)).astype(np.int64)
        return int(out[0]) if shape is None else out.reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """A uniform permutation of range(n) (argsort of random keys)."""
        return np.argsort(self.raw64(n), kind="stable")

    def split(self, *keys) -> "Rng":
        """Derive an independent child stream keyed by ints or strings.

        Children with equal (seed, keys) are identical; the child stream
        does not consume or disturb this generator's counter.
        """
        with np.errstate(over="ignore"):
            s = np.array([self._seed ^ np.uint64(0xA5A5A5A5A5A5A5A5)], dtype=np.uint64)
            for key in keys:
                for word in _key_words(key):
                    s = _mix64(s + _GOLDEN * np.array([word], dtype=np.uint64))
        return Rng(int(s[0]))


def assert_finite(x: np.ndarray, what: str) -> None:
    """Raise ValueError if ``x`` contains NaN or Inf."""
    if not np.all(np.isfinite(x)):
        raise ValueError(f"non-finite values in {what}")


def softmax(v: np.ndarray) -> np.ndarray:
    """Softmax of a vector, computed with max-subtraction so large inputs
    cannot overflow. Output entries lie in (0, 1) and sum to 1."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("softmax expects a non-empty vector")
    assert_finite(v, "softmax input")
    e = np.exp(v - v.max())
    return e / e.sum()


def softmax_rows(v: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a 2-D array (shared max-subtraction guard)."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] == 0:
        raise ValueError("softmax_rows expects a non-empty 2-D array")
    assert_finite(v, "softmax input")
    e = np.exp(v - v.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


_DFT_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _dft_matrices(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _DFT_CACHE:
        k = np.arange(n // 2 + 1)[:, None]
        t = np.arange(n)[None, :]
        ang = 2.0 * np.pi * k * t / n
        _DFT_CACHE[n] = (np.cos(ang), np.sin(ang))
        if len(_DFT_CACHE) > 8:
            _DFT_CACHE.pop(next(iter(_DFT_CACHE)))
    return _DFT_CACHE[n]


def dft_power(signal: np.ndarray, rate: float) -> tuple[np.ndarray, np.ndarray]:
    """One-sided DFT power spectrum of a real signal.

    Direct O(n^2) transform, intended as a slow, transparent reference for
    the faster spectral estimators. Bin powers satisfy Parseval exactly:
    ``sum(power) == mean(signal**2)`` up to rounding.

    Returns (frequencies in Hz, power per bin).
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("dft_power needs a 1-D signal of length >= 2")
    assert_finite(x, "dft_power input")
    n = x.size
    cos_m, sin_m = _dft_matrices(n)
    re = cos_m @ x
    im = sin_m @ x
    power = (re * re + im * im) / (n * n)
    scale = np.full(n // 2 + 1, 2.0)
    scale[0] = 1.0
    if n % 2 == 0:
        scale[-1] = 1.0
    power *= scale
    freqs = np.arange(n // 2 + 1) * (rate / n)
    return freqs, power


def normalize_mean_std(v: np.ndarray) -> np.ndarray:
    """Remove the mean and divide by the population standard deviation.

    Degenerate inputs (population std below 1e-12) come back as all zeros
    rather than blowing up, so constant sequences stay well-defined.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("normalize_mean_std expects a non-empty vector")
    centered = v - v.mean()
    std = np.sqrt(np.mean(centered * centered))
    if std < 1e-12:
        return np.zeros_like(v)
    return centered / std


def _betacf(a: float, b: float, x: float) -> float:
    # Continued fraction for the incomplete beta (modified Lentz).
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-12:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b), accurate to ~1e-12."""
    if a <= 0.0 or b <= 0.0:
        raise ValueError("beta parameters must be positive")
    if x < 0.0 or x > 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return float(x)
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf2(t: float, df: int) -> float:
    """Two-tailed tail probability P(|T| >= t) for Student's t."""
    if df < 1:
        raise ValueError("degrees of freedom must be >= 1")
    t = float(t)
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return betainc_reg(df / 2.0, 0.5, x)


def paired_t_test(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Paired two-tailed t-test on matched measurement vectors.

    t uses the sample standard deviation of the differences (n-1 divisor);
    the p-value comes from the Student-t distribution with df = n-1.
    Raises ValueError when the differences have (numerically) zero
    variance, since t is undefined there.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired_t_test needs two equal-length vectors")
    n = a.size
    if n < 2:
        raise ValueError("paired_t_test needs at least 2 pairs")
    d = a - b
    sd = float(np.std(d, ddof=1))
    scale = max(1.0, float(np.abs(d).max()))
    if sd <= 1e-12 * scale:
        raise ValueError("degenerate paired t-test: zero-variance differences")
    t = float(d.mean() / (sd / math.sqrt(n)))
    return t, student_t_sf2(t, n - 1)
