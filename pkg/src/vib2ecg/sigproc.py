"""Filtering, band decomposition, normalization and timestamp alignment.

All functions are pure. Timestamps are integer ticks of a 50 MHz clock
(one tick = 20 ns).
"""

from dataclasses import dataclass

import numpy as np
from scipy import signal

TICK_HZ = 50_000_000
FILTER_ORDER = 4
ECG_HIGHPASS_HZ = 0.5
ECG_LOWPASS_HZ = 40.0
VIB_HIGHPASS_HZ = 2.0
SPLIT_HZ = 20.0
NORM_EPS = 1e-8


class InvalidFilterSpec(ValueError):
    pass


class SignalTooShort(ValueError):
    pass


class TimestampError(ValueError):
    """Timestamps are not strictly increasing or do not fit their nominal rate."""


@dataclass(frozen=True)
class UniformSignal:
    samples: np.ndarray
    rate: float
    start_tick: int = 0

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples))
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")

    def __len__(self):
        return len(self.samples)

    def ticks(self):
        """Tick of every sample; exact when the rate divides the clock."""
        step = TICK_HZ / self.rate
        return self.start_tick + np.round(np.arange(len(self.samples)) * step).astype(np.uint64)

    def with_samples(self, samples):
        return UniformSignal(samples, self.rate, self.start_tick)


@dataclass(frozen=True)
class TimestampedSignal:
    """Samples with per-sample ticks; ``samples`` may be ``(n,)`` or ``(n, axes)``."""

    samples: np.ndarray
    timestamps: np.ndarray
    nominal_rate: float

    def __post_init__(self):
        samples = np.asarray(self.samples)
        ts = np.asarray(self.timestamps, dtype=np.uint64)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "timestamps", ts)
        if len(samples) != len(ts):
            raise ValueError(f"{len(samples)} samples but {len(ts)} timestamps")
        check_ticks(ts)
        if len(ts) > 1:
            mean_dt = (int(ts[-1]) - int(ts[0])) / (len(ts) - 1) / TICK_HZ
            if abs(mean_dt * self.nominal_rate - 1.0) > 0.01:
                raise TimestampError(
                    f"mean sample interval {mean_dt:.6g}s is not within 1% of 1/{self.nominal_rate} Hz"
                )

    def __len__(self):
        return len(self.timestamps)

    def axis(self, i=0):
        """Single-axis view (the signal itself when already 1D)."""
        if self.samples.ndim == 1:
            if i != 0:
                raise IndexError(f"single-axis signal has no axis {i}")
            return self
        return TimestampedSignal(self.samples[:, i], self.timestamps, self.nominal_rate)

    def as_uniform(self):
        """Treat samples as uniformly spaced at the nominal rate (jitter ignored)."""
        return UniformSignal(self.samples, self.nominal_rate, int(self.timestamps[0]))


@dataclass(frozen=True)
class FilterSpec:
    kind: str
    order: int
    cutoffs: tuple
    sample_rate: float

    def validate(self):
        kinds = ("low-pass", "high-pass", "band-pass")
        if self.kind not in kinds:
            raise InvalidFilterSpec(f"kind must be one of {kinds}, got {self.kind!r}")
        if self.order < 1:
            raise InvalidFilterSpec("order must be a positive integer")
        cutoffs = tuple(float(c) for c in np.atleast_1d(self.cutoffs))
        nyq = self.sample_rate / 2
        if self.kind == "band-pass":
            if len(cutoffs) != 2 or not cutoffs[0] < cutoffs[1]:
                raise InvalidFilterSpec("band-pass needs two ascending cutoffs")
        elif len(cutoffs) != 1:
            raise InvalidFilterSpec(f"{self.kind} takes one cutoff")
        for c in cutoffs:
            if not 0 < c < nyq:
                raise InvalidFilterSpec(f"cutoff {c} Hz outside (0, {nyq}) Hz for fs={self.sample_rate}")
        return cutoffs


@dataclass(frozen=True)
class BiquadCascade:
    """Second-order sections, each row ``(b0, b1, b2, a1, a2)`` with ``a0 = 1``."""

    sections: np.ndarray
    order: int = FILTER_ORDER

    def sos(self):
        s = np.asarray(self.sections, dtype=float)
        return np.column_stack([s[:, :3], np.ones(len(s)), s[:, 3:]])

    def pole_magnitudes(self):
        return np.concatenate([np.abs(np.roots([1.0, a1, a2])) for a1, a2 in self.sections[:, 3:]])

    def response(self, freqs, fs):
        """Complex frequency response at ``freqs`` (Hz)."""
        _, h = signal.sosfreqz(self.sos(), worN=np.asarray(freqs, dtype=float), fs=fs)
        return h


@dataclass(frozen=True)
class BandDecomposition:
    scg: UniformSignal
    pcgl: UniformSignal
    split_hz: float = SPLIT_HZ


def design_filter(spec):
    """Butterworth realization of ``spec`` as a cascade of biquads."""
    cutoffs = spec.validate()
    btype = {"low-pass": "lowpass", "high-pass": "highpass", "band-pass": "bandpass"}[spec.kind]
    wn = cutoffs if len(cutoffs) > 1 else cutoffs[0]
    sos = signal.butter(spec.order, wn, btype=btype, fs=spec.sample_rate, output="sos")
    sections = np.column_stack([sos[:, :3], sos[:, 4:]])
    cascade = BiquadCascade(sections, spec.order * (2 if spec.kind == "band-pass" else 1))
    if np.any(cascade.pole_magnitudes() >= 1.0):
        raise InvalidFilterSpec(f"unstable realization for {spec}")
    return cascade


def _settling_length(cascade, tol=1e-3, limit=1 << 20):
    """Samples until the impulse response stays below ``tol`` of its peak."""
    r = float(np.max(cascade.pole_magnitudes()))
    # |h[n]| decays roughly like r**n
    return int(min(limit, np.ceil(np.log(tol) / np.log(r)))) if r > 0 else 1


def filter_zero_phase(x, f):
    """Forward-backward filtering with odd-reflection edge padding.

    The pad is three settling lengths of the cascade, capped by the signal.
    """
    samples = np.asarray(x.samples, dtype=np.float64)
    if len(samples) <= 6 * f.order:
        raise SignalTooShort(f"{len(samples)} samples; need more than {6 * f.order}")
    padlen = min(3 * _settling_length(f), len(samples) - 1)
    y = signal.sosfiltfilt(f.sos(), samples, padtype="odd", padlen=padlen)
    return x.with_samples(y)


def _spec(kind, cutoffs, fs):
    return FilterSpec(kind, FILTER_ORDER, cutoffs, fs)


def preprocess_ecg(x):
    """Remove baseline drift (0.5 Hz high-pass) and mains hum (40 Hz low-pass)."""
    if x.rate != 1000:
        raise ValueError(f"ECG must be sampled at 1000 Hz, got {x.rate}")
    y = filter_zero_phase(x, design_filter(_spec("high-pass", ECG_HIGHPASS_HZ, x.rate)))
    y = filter_zero_phase(y, design_filter(_spec("low-pass", ECG_LOWPASS_HZ, x.rate)))
    return y.with_samples(y.samples - y.samples.mean())


def highpass_vibration(x, cutoff=VIB_HIGHPASS_HZ):
    return filter_zero_phase(x, design_filter(_spec("high-pass", cutoff, x.rate)))


def decompose_vibration(x, split_hz=SPLIT_HZ, low_hz=VIB_HIGHPASS_HZ):
    """Split vibration into the SCG band (low_hz..split_hz) and the PCGL band (> split_hz)."""
    if x.rate < 100:
        raise ValueError(f"vibration rate must be at least 100 Hz, got {x.rate}")
    scg = filter_zero_phase(x, design_filter(_spec("band-pass", (low_hz, split_hz), x.rate)))
    pcgl = filter_zero_phase(x, design_filter(_spec("high-pass", split_hz, x.rate)))
    return BandDecomposition(scg, pcgl, split_hz)


def zscore(samples, eps=NORM_EPS):
    a = np.asarray(samples, dtype=np.float64)
    centered = a - a.mean()
    return centered / (centered.std() + eps)


def normalize(x, method="zscore"):
    """Per-segment z-score; constant input maps to zeros."""
    if method != "zscore":
        raise ValueError(f"unknown normalization {method!r}")
    if len(x.samples) == 0:
        raise ValueError("cannot normalize an empty signal")
    return x.with_samples(zscore(x.samples))


def band_energy_fraction(x, split_hz=SPLIT_HZ):
    """Share of mean-removed signal energy below ``split_hz`` (periodogram integration).

    Energy at exactly ``split_hz`` is split evenly between the two bands so
    that the complementary fraction is ``1 - result`` by construction.
    """
    samples = np.asarray(x.samples, dtype=np.float64)
    if samples.size == 0:
        raise ValueError("empty signal")
    power = band_powers(samples, x.rate, split_hz)
    total = power[0] + power[1]
    if total == 0:
        return 0.0
    return float(power[0] / total)


def band_powers(samples, rate, split_hz):
    """(low, high) spectral energy of the mean-removed samples around ``split_hz``."""
    a = np.asarray(samples, dtype=np.float64)
    a = a - a.mean()
    spec = np.fft.rfft(a)
    freqs = np.fft.rfftfreq(len(a), 1.0 / rate)
    p = np.abs(spec) ** 2
    # one-sided spectrum: double every bin except DC and (even length) Nyquist
    weight = np.full(len(p), 2.0)
    weight[0] = 1.0
    if len(a) % 2 == 0:
        weight[-1] = 1.0
    p = p * weight / len(a)
    low = p[freqs < split_hz].sum() + 0.5 * p[freqs == split_hz].sum()
    high = p[freqs > split_hz].sum() + 0.5 * p[freqs == split_hz].sum()
    return low, high


def check_ticks(ticks):
    t = np.asarray(ticks)
    if t.size > 1 and np.any(np.diff(t.astype(np.int64)) <= 0):
        raise TimestampError("timestamps must be strictly increasing")
    return t


def align_to_ecg(vib, ecg_ticks):
    """Linearly interpolate ``vib`` at each ECG tick (clamped at the span edges)."""
    targets = check_ticks(np.asarray(ecg_ticks, dtype=np.uint64))
    src = vib.timestamps
    check_ticks(src)
    # offsets from a common origin keep float64 interpolation exact to the tick
    origin = int(min(src[0], targets[0])) if len(targets) else int(src[0])
    xs = (src.astype(np.int64) - origin).astype(np.float64)
    xt = (targets.astype(np.int64) - origin).astype(np.float64)
    samples = np.asarray(vib.samples, dtype=np.float64)
    if samples.ndim == 1:
        out = np.interp(xt, xs, samples)
    else:
        out = np.column_stack([np.interp(xt, xs, samples[:, i]) for i in range(samples.shape[1])])
    rate = TICK_HZ / ((int(targets[-1]) - int(targets[0])) / (len(targets) - 1)) if len(targets) > 1 else vib.nominal_rate
    return UniformSignal(out, rate, int(targets[0]) if len(targets) else 0)
