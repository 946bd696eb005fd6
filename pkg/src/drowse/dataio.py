"""EEG dataset plumbing.

Session records (continuous 500 Hz traces with lane-departure events) are
turned into labeled 3-second samples at 128 Hz: reaction-time labeling,
anti-aliased 500 -> 128 Hz resampling, per-subject session selection and
class balancing, binary file formats for both stages, and a synthetic
generator with known spectral class signatures for desk-scale testing.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .binio import FormatError, check_version, expect_magic, read_exact, read_u32, read_u64
from .numerics import Rng

SAMPLE_RATE_HZ = 128
SAMPLE_POINTS = 384
SESSION_RATE_HZ = 500

ALERT = "alert"
DROWSY = "drowsy"
EXCLUDED = "excluded"

ALERT_FACTOR = 1.5
DROWSY_FACTOR = 2.5
GLOBAL_WINDOW_S = 90.0
MIN_EVENTS = 20
MIN_CLASS_PER_SESSION = 50

# Rational rate change 500 -> 128 is up 32 / down 125.  The low-pass runs at
# the virtual 16 kHz rate; 10001 taps keep the group delay (5000) an exact
# multiple of 125 so output sample n lands on t = n/128 with no residual
# shift.  Kaiser beta for a 64 dB stopband, cutoff 0.9 of the new Nyquist.
RESAMPLE_UP = 32
RESAMPLE_DOWN = 125
RESAMPLE_TAPS = 10001
RESAMPLE_CUTOFF_HZ = 57.6
_KAISER_BETA = 0.1102 * (64.0 - 8.7)

_EEGD_MAGIC = b"EEGD"
_EEGS_MAGIC = b"EEGS"
_FORMAT_VERSION = 1


@dataclass
class EegSample:
    """One 3-second single-channel window: 384 points (uV) at 128 Hz."""

    subject_id: int
    label: int
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.shape != (SAMPLE_POINTS,):
            raise ValueError(f"expected {SAMPLE_POINTS} points, got {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("sample contains non-finite values")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 (alert) or 1 (drowsy), got {self.label}")
        if not 0 <= self.subject_id < 65536:
            raise ValueError(f"subject_id out of range: {self.subject_id}")


@dataclass
class SampleSet:
    """Array-backed collection of EegSample rows.

    data is [n, 384] float32, labels uint8 in {0,1}, subjects uint16.
    Immutable by convention once built.
    """

    data: np.ndarray
    labels: np.ndarray
    subjects: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        self.subjects = np.asarray(self.subjects, dtype=np.uint16)
        n = self.data.shape[0]
        if self.data.ndim != 2 or self.data.shape[1] != SAMPLE_POINTS:
            raise ValueError(f"data must be [n, {SAMPLE_POINTS}], got {self.data.shape}")
        if self.labels.shape != (n,) or self.subjects.shape != (n,):
            raise ValueError("labels/subjects length mismatch with data")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("data contains non-finite values")
        if n and self.labels.max() > 1:
            raise ValueError("labels must be 0 or 1")

    def __len__(self):
        return self.data.shape[0]

    def __getitem__(self, i: int) -> EegSample:
        return EegSample(int(self.subjects[i]), int(self.labels[i]), self.data[i].copy())

    def __eq__(self, other):
        if not isinstance(other, SampleSet):
            return NotImplemented
        return (
            np.array_equal(self.data, other.data)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.subjects, other.subjects)
        )

    @classmethod
    def from_samples(cls, samples) -> "SampleSet":
        samples = list(samples)
        if not samples:
            return cls(np.zeros((0, SAMPLE_POINTS), dtype=np.float32),
                       np.zeros(0, dtype=np.uint8), np.zeros(0, dtype=np.uint16))
        data = np.stack([s.samples for s in samples])
        labels = np.array([s.label for s in samples], dtype=np.uint8)
        subjects = np.array([s.subject_id for s in samples], dtype=np.uint16)
        return cls(data, labels, subjects)

    def subject_ids(self) -> list:
        return sorted(int(s) for s in np.unique(self.subjects))

    def subject_index(self) -> dict:
        return {sid: np.flatnonzero(self.subjects == sid) for sid in self.subject_ids()}

    def subset(self, which) -> "SampleSet":
        return SampleSet(self.data[which], self.labels[which], self.subjects[which])

    def class_counts(self, subject_id: int) -> tuple:
        mask = self.subjects == subject_id
        n_drowsy = int(self.labels[mask].sum())
        return int(mask.sum()) - n_drowsy, n_drowsy


@dataclass
class SessionRecord:
    """Continuous single-channel recording with lane-departure events.

    events is [n, 3] float64: event onset, response onset, response offset,
    all in seconds from recording start, sorted by event onset.
    """

    rate: int
    signal: np.ndarray
    events: np.ndarray

    def __post_init__(self):
        self.signal = np.asarray(self.signal, dtype=np.float64)
        self.events = np.asarray(self.events, dtype=np.float64).reshape(-1, 3)
        if self.rate <= 0:
            raise ValueError("rate must be positive")
        if self.signal.ndim != 1:
            raise ValueError("signal must be one-dimensional")
        if not np.all(np.isfinite(self.signal)):
            raise ValueError("signal contains non-finite values")
        if self.events.size:
            if not np.all(np.isfinite(self.events)):
                raise ValueError("event times contain non-finite values")
            onset, resp_on, resp_off = self.events.T
            if np.any(np.diff(onset) < 0):
                raise ValueError("events not sorted by onset")
            if np.any(onset >= resp_on) or np.any(resp_on > resp_off):
                raise ValueError("each event needs onset < response onset <= response offset")
            duration = self.signal.size / self.rate
            if onset[0] < 0 or np.any(resp_off > duration):
                raise ValueError("event times fall outside the recording")

    @property
    def duration_s(self) -> float:
        return self.signal.size / self.rate


@dataclass
class RtLabel:
    """Reaction-time verdict for one event."""

    local_rt_s: float
    global_rt_s: float
    alert_rt_s: float
    verdict: str


def _verdict(local_rt: float, global_rt: float, alert_rt: float) -> str:
    if local_rt < ALERT_FACTOR * alert_rt and global_rt < ALERT_FACTOR * alert_rt:
        return ALERT
    if local_rt > DROWSY_FACTOR * alert_rt and global_rt > DROWSY_FACTOR * alert_rt:
        return DROWSY
    return EXCLUDED


def label_session(session: SessionRecord) -> list:
    """Label every event of a session as alert/drowsy/excluded.

    local RT is response onset minus event onset; the session baseline
    (alert RT) is the 5th percentile of local RTs; global RT averages the
    local RTs of events starting in the preceding 90 s window, falling back
    to the event's own local RT when that window is empty.
    """
    n = session.events.shape[0]
    if n < MIN_EVENTS:
        raise ValueError(f"need at least {MIN_EVENTS} events to label a session, got {n}")
    onsets = session.events[:, 0]
    local_rts = session.events[:, 1] - session.events[:, 0]
    alert_rt = float(np.percentile(local_rts, 5.0))

    labels = []
    for i in range(n):
        lo = int(np.searchsorted(onsets, onsets[i] - GLOBAL_WINDOW_S, side="left"))
        hi = int(np.searchsorted(onsets, onsets[i], side="left"))
        if hi > lo:
            global_rt = float(np.mean(local_rts[lo:hi]))
        else:
            global_rt = float(local_rts[i])
        verdict = _verdict(float(local_rts[i]), global_rt, alert_rt)
        labels.append(RtLabel(float(local_rts[i]), global_rt, alert_rt, verdict))
    return labels


# -- resampling ---------------------------------------------------------------

_FILTER_BRANCHES = None


def _filter_branches() -> list:
    """Polyphase decomposition of the windowed-sinc low-pass.

    Branch p holds taps p, p+32, p+64, ...; each branch is normalized to
    unit sum so the DC gain is exactly 1 (this also absorbs the factor 32
    that compensates zero-stuffing).
    """
    global _FILTER_BRANCHES
    if _FILTER_BRANCHES is None:
        k = np.arange(RESAMPLE_TAPS, dtype=np.float64)
        center = (RESAMPLE_TAPS - 1) // 2
        # normalized cutoff at the virtual 16 kHz rate
        cut = 2.0 * RESAMPLE_CUTOFF_HZ / (SESSION_RATE_HZ * RESAMPLE_UP)
        taps = cut * np.sinc(cut * (k - center)) * np.kaiser(RESAMPLE_TAPS, _KAISER_BETA)
        branches = []
        for p in range(RESAMPLE_UP):
            b = taps[p::RESAMPLE_UP].copy()
            b /= b.sum()
            branches.append(b)
        _FILTER_BRANCHES = branches
    return _FILTER_BRANCHES


def resample_500_to_128(x: np.ndarray) -> np.ndarray:
    """Rational 32/125 resampling with a Kaiser windowed-sinc anti-alias filter.

    Output sample n estimates the signal at t = n/128 s (group delay is
    compensated exactly).  Edges are handled by replicating the first/last
    input value, so a constant signal stays constant over the full output.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("input must be one-dimensional")
    span = -(-RESAMPLE_TAPS // RESAMPLE_UP)
    if x.size < span:
        raise ValueError(f"input shorter than the filter span ({span} points)")
    branches = _filter_branches()
    n_out = int(round(x.size * RESAMPLE_UP / RESAMPLE_DOWN))
    delay = (RESAMPLE_TAPS - 1) // 2

    pad = span
    xpad = np.concatenate([np.full(pad, x[0]), x, np.full(pad, x[-1])])
    out = np.empty(n_out)
    s = RESAMPLE_DOWN * np.arange(n_out) + delay
    phases = s % RESAMPLE_UP
    starts = s // RESAMPLE_UP + pad
    for p in range(RESAMPLE_UP):
        sel = np.flatnonzero(phases == p)
        if sel.size == 0:
            continue
        b = branches[p]
        idx = starts[sel][:, None] - np.arange(b.size)[None, :]
        out[sel] = xpad[idx] @ b
    return out


def _window_starts(session: SessionRecord, labels) -> list:
    window = 3 * SESSION_RATE_HZ
    kept = []
    for i, lab in enumerate(labels):
        if lab.verdict == EXCLUDED:
            continue
        end = int(round(session.events[i, 0] * session.rate))
        if end - window < 0:
            continue
        kept.append((i, end - window, end))
    return kept


def extract_windows(session: SessionRecord, labels, subject_id: int = 0) -> list:
    """Cut the 3 s window preceding each non-excluded event and resample it.

    Events starting less than 3 s into the recording are skipped.
    """
    if session.rate != SESSION_RATE_HZ:
        raise ValueError(f"expected a {SESSION_RATE_HZ} Hz session, got {session.rate}")
    if len(labels) != session.events.shape[0]:
        raise ValueError("one label per event required")
    out = []
    for i, start, end in _window_starts(session, labels):
        resampled = resample_500_to_128(session.signal[start:end])
        label = 0 if labels[i].verdict == ALERT else 1
        out.append(EegSample(subject_id, label, resampled.astype(np.float32)))
    return out


# -- balancing ----------------------------------------------------------------

@dataclass
class SessionSamples:
    """Extracted samples of one session plus the RT metadata balancing needs."""

    subject_id: int
    session_id: int
    samples: list
    local_rts: np.ndarray

    def __post_init__(self):
        self.local_rts = np.asarray(self.local_rts, dtype=np.float64)
        if self.local_rts.shape != (len(self.samples),):
            raise ValueError("one local RT per sample required")

    def counts(self) -> tuple:
        n_drowsy = sum(s.label for s in self.samples)
        return len(self.samples) - n_drowsy, n_drowsy


def session_samples(session: SessionRecord, labels, subject_id: int,
                    session_id: int) -> SessionSamples:
    """extract_windows plus the local RTs of the kept events."""
    samples = extract_windows(session, labels, subject_id)
    rts = np.array([labels[i].local_rt_s for i, _, _ in _window_starts(session, labels)])
    return SessionSamples(subject_id, session_id, samples, rts)


def _trim_majority(sess: SessionSamples) -> list:
    """Equalize class counts: drop longest-RT alert / shortest-RT drowsy samples."""
    labels = np.array([s.label for s in sess.samples])
    n_alert = int((labels == 0).sum())
    n_drowsy = int((labels == 1).sum())
    keep = np.ones(labels.size, dtype=bool)
    if n_alert > n_drowsy:
        pos = np.flatnonzero(labels == 0)
        order = np.argsort(sess.local_rts[pos], kind="stable")
        keep[pos[order[n_drowsy:]]] = False
    elif n_drowsy > n_alert:
        pos = np.flatnonzero(labels == 1)
        order = np.argsort(-sess.local_rts[pos], kind="stable")
        keep[pos[order[n_alert:]]] = False
    return [s for s, k in zip(sess.samples, keep) if k]


def balance(sessions) -> SampleSet:
    """Session selection and class balancing.

    Sessions with fewer than 50 samples of either class are dropped; per
    subject the session with the most balanced class counts is kept (ties:
    larger total, then lower session id); the majority class is trimmed to
    the minority count keeping shortest-RT alert / longest-RT drowsy samples.
    """
    eligible = [s for s in sessions
                if min(s.counts()) >= MIN_CLASS_PER_SESSION]
    by_subject = {}
    for sess in eligible:
        by_subject.setdefault(sess.subject_id, []).append(sess)

    kept = []
    for subject in sorted(by_subject):
        candidates = by_subject[subject]
        def rank(s):
            n_alert, n_drowsy = s.counts()
            return (abs(n_alert - n_drowsy), -(n_alert + n_drowsy), s.session_id)
        best = min(candidates, key=rank)
        kept.extend(_trim_majority(best))
    if not kept:
        raise ValueError("no session survived balancing")
    return SampleSet.from_samples(kept)


# -- file formats -------------------------------------------------------------

def write_sampleset(sample_set: SampleSet, path) -> None:
    n = len(sample_set)
    with open(path, "wb") as fh:
        fh.write(_EEGD_MAGIC)
        fh.write(struct.pack("<IIII", _FORMAT_VERSION, n, SAMPLE_POINTS, SAMPLE_RATE_HZ))
        for i in range(n):
            fh.write(struct.pack("<HBB", int(sample_set.subjects[i]),
                                 int(sample_set.labels[i]), 0))
            fh.write(sample_set.data[i].astype("<f4").tobytes())


def read_sampleset(path) -> SampleSet:
    with open(path, "rb") as fh:
        expect_magic(fh, _EEGD_MAGIC)
        check_version(read_u32(fh, "version"), _FORMAT_VERSION, "sample set")
        n = read_u32(fh, "sample count")
        n_points = read_u32(fh, "points per sample")
        rate = read_u32(fh, "sampling rate")
        if n_points != SAMPLE_POINTS:
            raise FormatError(f"expected {SAMPLE_POINTS} points per sample, got {n_points}")
        if rate != SAMPLE_RATE_HZ:
            raise FormatError(f"expected {SAMPLE_RATE_HZ} Hz samples, got {rate}")
        data = np.empty((n, SAMPLE_POINTS), dtype=np.float32)
        labels = np.empty(n, dtype=np.uint8)
        subjects = np.empty(n, dtype=np.uint16)
        row_bytes = 4 + 4 * SAMPLE_POINTS
        for i in range(n):
            row = read_exact(fh, row_bytes, f"sample {i}")
            subject, label, _ = struct.unpack_from("<HBB", row)
            if label > 1:
                raise FormatError(f"sample {i} has invalid label {label}")
            subjects[i] = subject
            labels[i] = label
            data[i] = np.frombuffer(row, dtype="<f4", count=SAMPLE_POINTS, offset=4)
        extra = fh.read(1)
        if extra:
            raise FormatError("trailing bytes after the last sample")
    return SampleSet(data, labels, subjects)


def write_session(session: SessionRecord, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_EEGS_MAGIC)
        fh.write(struct.pack("<II", _FORMAT_VERSION, session.rate))
        fh.write(struct.pack("<Q", session.signal.size))
        fh.write(session.signal.astype("<f4").tobytes())
        fh.write(struct.pack("<I", session.events.shape[0]))
        fh.write(session.events.astype("<f8").tobytes())


def read_session(path) -> SessionRecord:
    with open(path, "rb") as fh:
        expect_magic(fh, _EEGS_MAGIC)
        check_version(read_u32(fh, "version"), _FORMAT_VERSION, "session")
        rate = read_u32(fh, "sampling rate")
        n_points = read_u64(fh, "point count")
        raw = read_exact(fh, 4 * n_points, "signal")
        signal = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        n_events = read_u32(fh, "event count")
        raw = read_exact(fh, 24 * n_events, "events")
        events = np.frombuffer(raw, dtype="<f8").reshape(n_events, 3)
        extra = fh.read(1)
        if extra:
            raise FormatError("trailing bytes after the event table")
    return SessionRecord(rate, signal, events.copy())


# -- synthetic data -----------------------------------------------------------

_T = np.arange(SAMPLE_POINTS) / SAMPLE_RATE_HZ


def _pink_noise(rng: Rng, rms_uv: float) -> np.ndarray:
    """1/f-amplitude sum of sinusoids at 1..63 Hz with random phases."""
    freqs = np.arange(1.0, 64.0)
    amps = freqs ** -0.5
    amps = amps * (rms_uv / np.sqrt(0.5 * np.sum(amps ** 2)))
    phases = rng.uniform((freqs.size,), 0.0, 2.0 * np.pi)
    return (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * _T[None, :]
                                   + phases[:, None])).sum(axis=0)


def _spindle_burst(rng: Rng, alpha_hz: float, amp_uv: float, lo_s: float,
                   hi_s: float) -> np.ndarray:
    center = rng.uniform(low=lo_s, high=hi_s)
    half_width = rng.uniform(low=0.45, high=0.6)
    phase = rng.uniform(low=0.0, high=2.0 * np.pi)
    arg = (_T - center) / half_width
    envelope = np.where(np.abs(arg) < 1.0, 0.5 * (1.0 + np.cos(np.pi * arg)), 0.0)
    return amp_uv * envelope * np.sin(2 * np.pi * alpha_hz * _T + phase)


def _drowsy_signal(rng: Rng, alpha_hz: float, gain: float, noise_uv: float) -> np.ndarray:
    sig = _pink_noise(rng, noise_uv)
    # Two bursts in disjoint time slots; equal-frequency bursts in the same
    # slot could cancel and erase the class signature.
    for lo_s, hi_s in ((0.6, 1.2), (1.8, 2.4)):
        amp = noise_uv * rng.uniform(low=3.2, high=4.5) * gain
        sig += _spindle_burst(rng, alpha_hz, amp, lo_s, hi_s)
    return sig


def _alert_signal(rng: Rng, gain: float, noise_uv: float) -> np.ndarray:
    sig = _pink_noise(rng, noise_uv)
    # Half the components are pinned below 30 Hz so the Beta band always
    # carries broadband mass regardless of the frequency draws.
    freqs = np.concatenate([rng.uniform((6,), 15.0, 30.0), rng.uniform((6,), 28.0, 45.0)])
    amps = noise_uv * rng.uniform((12,), 0.5, 0.75) * gain
    phases = rng.uniform((12,), 0.0, 2.0 * np.pi)
    sig += (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * _T[None, :]
                                   + phases[:, None])).sum(axis=0)
    if rng.uniform() < 0.3:
        sig += rng.uniform(low=4.0, high=8.0) * np.sin(2 * np.pi * 0.5 * _T + rng.uniform(low=0.0, high=2 * np.pi))
    return sig


def generate_synthetic(n_subjects: int, per_class: int, seed: int) -> SampleSet:
    """Synthetic two-class EEG with subject variability.

    Drowsy samples carry 9-11 Hz spindle bursts over pink noise; alert
    samples carry broadband 15-45 Hz activity (plus occasional slow drift)
    over pink noise.  Subject identity shifts the spindle frequency, gain
    and noise floor.  Deterministic per seed.
    """
    if n_subjects < 2:
        raise ValueError("need at least 2 subjects")
    if per_class < 10:
        raise ValueError("need at least 10 samples per class")
    base = Rng(seed)
    samples = []
    for subject in range(1, n_subjects + 1):
        traits = base.split("traits", subject)
        alpha_hz = traits.uniform(low=9.0, high=11.0)
        gain = traits.uniform(low=0.8, high=1.25)
        noise_uv = traits.uniform(low=2.5, high=4.0)
        for label in (0, 1):
            for i in range(per_class):
                rng = base.split("sample", subject, label, i)
                if label == 0:
                    sig = _alert_signal(rng, gain, noise_uv)
                else:
                    sig = _drowsy_signal(rng, alpha_hz, gain, noise_uv)
                samples.append(EegSample(subject, label, sig.astype(np.float32)))
    return SampleSet.from_samples(samples)
