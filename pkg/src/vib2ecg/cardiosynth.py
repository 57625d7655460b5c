"""Paired ECG / chest-vibration generator with exact beat annotations.

One heart drives every position: beat times come from a Gaussian RR
model, the ECG is a sum of five Gaussian bumps per beat, and the
vibration is built from

* a low-band myocardial complex (gamma-enveloped 8-12 Hz oscillation)
  starting about 40 ms after each R peak, plus a weaker, slower diastolic
  complex at S2;
* high-band heart sounds: identical Gabor bursts at S1 and S2 whose
  amplitudes differ only by a per-beat S2/S1 ratio, so S1 and S2 can be
  confused when the ratio approaches one.

Noise injectors cover baseline wander, mains hum, motion bursts and
respiration-gated snoring.
"""

from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import signal

from .datastore import POSITIONS, PairedChannel, Recording
from .sigproc import TICK_HZ, TimestampedSignal, UniformSignal

ECG_RATE = 1000
VIB_RATE = 500
DAY_TICKS = 86_400 * TICK_HZ
NOISE_KINDS = ("baseline", "powerline", "motion", "snore", "white")

# (P, Q, R, S, T) amplitudes in mV: R-wave progression from a QS complex at
# V1 to a dominant R at V5/V6.
ECG_PROGRESSION = {
    "V1": (0.08, 0.00, -0.90, 0.15, -0.10),
    "V2": (0.08, 0.00, -0.70, 0.25, 0.25),
    "V3": (0.08, -0.05, 0.55, -0.20, 0.30),
    "V4": (0.08, -0.10, 1.10, -0.25, 0.35),
    "V5": (0.08, -0.12, 1.30, -0.15, 0.30),
    "V6": (0.08, -0.12, 1.00, -0.08, 0.25),
}
# per-position vibration gain and propagation delay (s)
VIB_POSITION = {
    "V1": (0.85, 0.004),
    "V2": (1.00, 0.002),
    "V3": (1.10, 0.000),
    "V4": (1.15, 0.000),
    "V5": (1.00, 0.002),
    "V6": (0.80, 0.005),
}

QRS_OFFSETS = (-0.025, 0.0, 0.025)  # Q, R, S centre offsets (s)
QRS_WIDTHS = (0.008, 0.009, 0.008)
P_OFFSET_FRAC, P_WIDTH = 0.16, 0.022
T_CENTER_FRAC, T_WIDTH_FRAC = 0.25, 0.035
T_END_SIGMAS = 2.5
S1_DELAY = 0.030
S2_DELAY_FRAC = 0.37
SCG_DELAY = 0.040
HS_CARRIER, HS_SIGMA = 50.0, 0.012
HS_ONSET_SIGMAS = 2.0
SCG_SYS_FREQ, SCG_DIA_FREQ = 10.0, 6.0
SCG_TAU = 0.020
SCG_SHAPE = 3  # envelope t**shape * exp(-t / tau)


@dataclass(frozen=True)
class SubjectProfile:
    heart_rate_mean: float = 65.0
    heart_rate_std: float = 3.0
    s1_amplitude_mean: float = 1.0
    s2_amplitude_mean: float = 0.6
    s2_over_s1_jitter: float = 0.08
    vib_gain: float = 1.0
    snore_probability: float = 0.0
    rng_seed: int = 0
    # timing spread of the myocardial complex relative to the R peak (s)
    scg_delay_jitter: float = 0.012
    # amplitudes; vibration in m/s^2 relative to a 0.05 m/s^2 systolic complex
    scg_amplitude: float = 0.05
    heart_sound_ratio: float = 0.22
    sensor_noise: float = 0.0004
    snore_level: float = 0.006
    motion_level: float = 0.0
    motion_rate: float = 0.0
    ecg_baseline_level: float = 0.08
    ecg_powerline_level: float = 0.02
    ecg_noise: float = 0.005

    def validate(self):
        if not 30 <= self.heart_rate_mean <= 200:
            raise ValueError(f"heart_rate_mean must lie in [30, 200] bpm, got {self.heart_rate_mean}")
        if self.heart_rate_std < 0 or self.s2_over_s1_jitter < 0 or self.scg_delay_jitter < 0:
            raise ValueError("spreads must be non-negative")
        if not 0 <= self.snore_probability <= 1:
            raise ValueError("snore_probability must lie in [0, 1]")
        if self.vib_gain < 0:
            raise ValueError("vib_gain must be non-negative")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class DayDriftModel:
    """Multiplicative per-day drifts; day ``d`` uses entry ``d`` (1.0 when absent)."""

    heart_rate: tuple = ()
    vib_gain: tuple = ()
    noise: tuple = ()

    def __post_init__(self):
        for name in ("heart_rate", "vib_gain", "noise"):
            vals = tuple(float(v) for v in getattr(self, name))
            if any(not 0.5 <= v <= 2.0 for v in vals):
                raise ValueError(f"{name} drifts must lie in [0.5, 2.0], got {vals}")
            object.__setattr__(self, name, vals)

    def factors(self, day):
        def pick(seq):
            return seq[day] if day < len(seq) else 1.0

        return pick(self.heart_rate), pick(self.vib_gain), pick(self.noise)

    @classmethod
    def random(cls, n_days, spread=0.05, seed=0):
        rng = np.random.default_rng(seed)
        draw = lambda: tuple(np.clip(1 + spread * rng.standard_normal(n_days), 0.5, 2.0))  # noqa: E731
        return cls(draw(), draw(), draw())


@dataclass(frozen=True)
class BeatAnnotations:
    r_peaks: np.ndarray
    t_ends: np.ndarray
    s1_onsets: np.ndarray
    s2_onsets: np.ndarray
    s1_amplitudes: np.ndarray = field(default_factory=lambda: np.zeros(0))
    s2_amplitudes: np.ndarray = field(default_factory=lambda: np.zeros(0))
    scg_onsets: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint64))

    def __len__(self):
        return len(self.r_peaks)

    def check_order(self):
        r = self.r_peaks.astype(np.int64)
        ok = (r < self.s1_onsets.astype(np.int64)) & (self.s1_onsets < self.t_ends) & (self.t_ends < self.s2_onsets)
        ok &= np.append(self.s2_onsets[:-1].astype(np.int64) < r[1:], True)
        return bool(np.all(ok))

    def to_indices(self, start_tick, rate=ECG_RATE):
        """Annotation instants as (float) sample positions relative to ``start_tick``."""
        step = TICK_HZ / rate

        def conv(t):
            return (np.asarray(t, dtype=np.int64) - int(start_tick)) / step

        return {k: conv(getattr(self, k)) for k in ("r_peaks", "t_ends", "s1_onsets", "s2_onsets")}

    def to_json(self):
        return {
            k: [int(v) if k not in ("s1_amplitudes", "s2_amplitudes") else float(v) for v in getattr(self, k)]
            for k in ("r_peaks", "t_ends", "s1_onsets", "s2_onsets", "s1_amplitudes", "s2_amplitudes", "scg_onsets")
        }

    @classmethod
    def from_json(cls, d):
        ticks = {k: np.asarray(d[k], dtype=np.uint64) for k in ("r_peaks", "t_ends", "s1_onsets", "s2_onsets", "scg_onsets")}
        amps = {k: np.asarray(d[k], dtype=np.float64) for k in ("s1_amplitudes", "s2_amplitudes")}
        return cls(**ticks, **amps)


def _rng(profile, rng, stream):
    if rng is not None:
        return rng
    return np.random.default_rng([profile.rng_seed, stream])


def _sec_to_tick(t):
    return np.round(np.asarray(t, dtype=np.float64) * TICK_HZ).astype(np.int64)


def gen_beat_times(profile, duration, rng=None, start_tick=0, hr_scale=1.0):
    """R-peak ticks over ``duration`` seconds.

    RR intervals are Gaussian with mean ``60 / hr`` and the delta-method
    spread ``60 * hr_std / hr**2``, clipped to [0.3, 2] s. The first beat
    falls half an interval after the start.
    """
    profile.validate()
    if duration <= 0:
        raise ValueError("duration must be positive")
    rng = _rng(profile, rng, 1)
    hr = profile.heart_rate_mean * hr_scale
    mean_rr = 60.0 / hr
    sd_rr = 60.0 * profile.heart_rate_std * hr_scale / hr**2
    n_max = int(np.ceil(duration / 0.3)) + 2
    rr = np.clip(mean_rr + sd_rr * rng.standard_normal(n_max), 0.3, 2.0)
    t = 0.5 * rr[0] + np.concatenate([[0.0], np.cumsum(rr[1:])])
    t = t[t < duration]
    return (int(start_tick) + _sec_to_tick(t)).astype(np.uint64)


def _intervals(beats_s):
    """Interval following each beat (the last beat reuses the previous one)."""
    if len(beats_s) == 0:
        return np.zeros(0)
    if len(beats_s) == 1:
        return np.array([1.0])
    rr = np.diff(beats_s)
    return np.append(rr, rr[-1])


def annotate_beats(beats, profile=None, rng=None):
    """Cardiac event instants and per-beat heart-sound amplitudes for ``beats``."""
    profile = profile or SubjectProfile()
    rng = _rng(profile, rng, 2)
    beats = np.asarray(beats, dtype=np.uint64)
    t = beats.astype(np.int64) / TICK_HZ
    rr = _intervals(t)
    n = len(beats)
    s1_amp = profile.s1_amplitude_mean * np.clip(1 + 0.08 * rng.standard_normal(n), 0.5, 1.5)
    ratio = profile.s2_amplitude_mean / profile.s1_amplitude_mean + profile.s2_over_s1_jitter * rng.standard_normal(n)
    s2_amp = s1_amp * np.clip(ratio, 0.05, 2.0)
    scg_delay = np.clip(SCG_DELAY + profile.scg_delay_jitter * rng.standard_normal(n), 0.005, 0.1)
    base = beats.astype(np.int64)
    t_end = T_CENTER_FRAC * rr + T_END_SIGMAS * T_WIDTH_FRAC * rr
    return BeatAnnotations(
        r_peaks=beats,
        t_ends=(base + _sec_to_tick(t_end)).astype(np.uint64),
        s1_onsets=(base + _sec_to_tick(np.full(n, S1_DELAY))).astype(np.uint64),
        s2_onsets=(base + _sec_to_tick(S2_DELAY_FRAC * rr)).astype(np.uint64),
        s1_amplitudes=s1_amp,
        s2_amplitudes=s2_amp,
        scg_onsets=(base + _sec_to_tick(scg_delay)).astype(np.uint64),
    )


def _gauss(t, centers, widths, amps, out):
    """Accumulate Gaussian bumps into ``out`` (evaluated within +/-6 widths)."""
    dt = t[1] - t[0] if len(t) > 1 else 1.0
    for c, w, a in zip(centers, widths, amps):
        if a == 0:
            continue
        lo = max(0, int(np.floor((c - 6 * w - t[0]) / dt)))
        hi = min(len(t), int(np.ceil((c + 6 * w - t[0]) / dt)) + 1)
        if lo >= hi:
            continue
        seg = t[lo:hi]
        out[lo:hi] += a * np.exp(-0.5 * ((seg - c) / w) ** 2)


def gen_ecg(beats, position, fs=ECG_RATE, start_tick=0, n_samples=None, annotations=None):
    """Render an ECG lead; returns the signal and the beat annotations.

    ``n_samples`` defaults to one second past the last beat.
    """
    if position not in ECG_PROGRESSION:
        raise ValueError(f"unknown position {position!r}; expected one of {POSITIONS}")
    beats = np.asarray(beats, dtype=np.uint64)
    ann = annotations if annotations is not None else annotate_beats(beats)
    rel = (beats.astype(np.int64) - int(start_tick)) / TICK_HZ
    if n_samples is None:
        n_samples = int(np.ceil(((rel[-1] if len(rel) else 0.0) + 1.0) * fs))
    t = np.arange(n_samples) / fs
    out = np.zeros(n_samples)
    p_amp, q_amp, r_amp, s_amp, t_amp = ECG_PROGRESSION[position]
    rr_next = _intervals(rel)
    rr_prev = np.concatenate([rr_next[:1], rr_next[:-1]]) if len(rel) else rr_next
    for r, rn, rp in zip(rel, rr_next, rr_prev):
        centers = [r - P_OFFSET_FRAC * rp] + [r + o for o in QRS_OFFSETS] + [r + T_CENTER_FRAC * rn]
        widths = [P_WIDTH, *QRS_WIDTHS, T_WIDTH_FRAC * rn]
        _gauss(t, centers, widths, (p_amp, q_amp, r_amp, s_amp, t_amp), out)
    return UniformSignal(out.astype(np.float32), fs, int(start_tick)), ann


def _scg_kernel(freq, fs, amp, phase=0.0):
    """Gamma-enveloped oscillation ``t**k exp(-t/tau) cos(2 pi f t + phase)``, unit peak envelope."""
    t = np.arange(int(0.4 * fs)) / fs
    env = t**SCG_SHAPE * np.exp(-t / SCG_TAU)
    env /= env.max()
    return amp * env * np.cos(2 * np.pi * freq * t + phase)


def _add_at(out, kernel, start_s, fs):
    i0 = int(np.round(start_s * fs))
    lo, hi = max(i0, 0), min(i0 + len(kernel), len(out))
    if lo < hi:
        out[lo:hi] += kernel[lo - i0 : hi - i0]


def gen_vibration(beats, annotations, profile=None, fs=VIB_RATE, start_tick=0, n_samples=None, position="V4", rng=None, gain_scale=1.0):
    """Cardiac chest acceleration (one axis) at ``fs`` with +/-1 tick timestamp jitter.

    Sensor noise is not included; ``gen_paired_recording`` adds it.
    """
    profile = (profile or SubjectProfile()).validate()
    rng = _rng(profile, rng, 3)
    ann = annotations
    rel = lambda ticks: (np.asarray(ticks, dtype=np.int64) - int(start_tick)) / TICK_HZ  # noqa: E731
    r_s = rel(ann.r_peaks)
    if n_samples is None:
        n_samples = int(np.ceil(((r_s[-1] if len(r_s) else 0.0) + 1.0) * fs))
    pos_gain, pos_delay = VIB_POSITION.get(position, (1.0, 0.0))
    gain = profile.vib_gain * gain_scale * pos_gain
    out = np.zeros(n_samples)
    if gain > 0 and len(r_s):
        n = len(r_s)
        sys_f = np.clip(SCG_SYS_FREQ + 0.6 * rng.standard_normal(n), 8.0, 12.0)
        sys_a = 1.0 + 0.05 * rng.standard_normal(n)
        dia_a = 0.3 + 0.03 * rng.standard_normal(n)
        scg_on = rel(ann.scg_onsets) + pos_delay
        s2_on = rel(ann.s2_onsets) + pos_delay
        s1_on = rel(ann.s1_onsets) + pos_delay
        amp = profile.scg_amplitude
        for i in range(n):
            _add_at(out, _scg_kernel(sys_f[i], fs, amp * sys_a[i]), scg_on[i], fs)
            _add_at(out, _scg_kernel(SCG_DIA_FREQ, fs, amp * dia_a[i], np.pi), s2_on[i], fs)
        hs_amp = amp * profile.heart_sound_ratio
        tt = np.arange(n_samples) / fs
        lead = HS_ONSET_SIGMAS * HS_SIGMA
        for on, a in ((s1_on, ann.s1_amplitudes), (s2_on, ann.s2_amplitudes)):
            for c, ai in zip(on + lead, a):
                lo = max(0, int((c - 5 * HS_SIGMA) * fs))
                hi = min(n_samples, int((c + 5 * HS_SIGMA) * fs) + 1)
                if lo < hi:
                    seg = tt[lo:hi] - c
                    out[lo:hi] += hs_amp * ai * np.exp(-0.5 * (seg / HS_SIGMA) ** 2) * np.cos(2 * np.pi * HS_CARRIER * seg)
        out *= gain
    nominal_step = TICK_HZ // fs
    ticks = int(start_tick) + np.arange(n_samples, dtype=np.int64) * nominal_step
    ticks += rng.integers(-1, 2, size=n_samples)
    ticks[0] = max(ticks[0], 0)
    return TimestampedSignal(out.astype(np.float32), ticks.astype(np.uint64), fs)


# -- noise ------------------------------------------------------------------


def _rms_scale(x, level):
    rms = np.sqrt(np.mean(x**2)) if x.size else 0.0
    return x * (level / rms) if rms > 0 else x


def snore_gate(n, fs, probability, rng, resp_rate=15.0, burst_frac=0.4, block_s=3.0):
    """Boolean mask of snore bursts.

    Each ``block_s`` block snores with ``probability``; inside snoring
    blocks a burst fills the inspiratory ``burst_frac`` of every breath.
    """
    t = np.arange(n) / fs
    period = 60.0 / resp_rate
    phase = rng.uniform(0, period)
    breathing = ((t + phase) % period) < burst_frac * period
    n_blocks = int(np.ceil(n / (block_s * fs))) if n else 0
    active_blocks = rng.random(n_blocks) < probability
    block_of = (t // block_s).astype(int)
    return breathing & active_blocks[block_of] if n else np.zeros(0, dtype=bool)


def noise_component(kind, n, fs, level, rng, snore_probability=1.0, motion_rate=6.0, resp_rate=15.0):
    """One additive noise trace and the mask of samples it occupies.

    ``level`` is the RMS amplitude of the trace over its active samples.
    """
    if kind not in NOISE_KINDS:
        raise ValueError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")
    t = np.arange(n) / fs
    mask = np.ones(n, dtype=bool)
    if kind == "baseline":
        x = np.zeros(n)
        for f in rng.uniform(0.1, 0.5, size=3):
            x += rng.uniform(0.5, 1.0) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
        return _rms_scale(x, level), mask
    if kind == "powerline":
        x = np.zeros(n)
        for k, a in ((1, 1.0), (2, 0.5), (3, 0.25)):
            if 50 * k < fs / 2:
                x += a * np.sin(2 * np.pi * 50 * k * t + rng.uniform(0, 2 * np.pi))
        return _rms_scale(x, level), mask
    if kind == "white":
        return level * rng.standard_normal(n), mask
    if kind == "motion":
        x = np.zeros(n)
        mask = np.zeros(n, dtype=bool)
        duration = n / fs
        for _ in range(rng.poisson(motion_rate * duration / 60.0)):
            width = rng.uniform(0.3, 1.0)
            lo = int(rng.uniform(0, max(duration - width, 0)) * fs)
            hi = min(n, lo + int(width * fs))
            if hi - lo < 4:
                continue
            burst = np.cumsum(rng.standard_normal(hi - lo)) + 3 * rng.standard_normal(hi - lo)
            burst -= np.linspace(burst[0], burst[-1], hi - lo)
            burst = _rms_scale(burst * signal.windows.tukey(hi - lo, 0.3), level)
            x[lo:hi] += burst
            mask[lo:hi] = True
        return x, mask
    # snore: 20-300 Hz band noise, pulsed at a glottal rate, gated by breathing
    mask = snore_gate(n, fs, snore_probability, rng, resp_rate)
    if not mask.any():
        return np.zeros(n), mask
    hi_edge = min(300.0, 0.45 * fs)
    sos = signal.butter(4, (20.0, hi_edge), btype="bandpass", fs=fs, output="sos")
    carrier = signal.sosfilt(sos, rng.standard_normal(n))
    f0 = rng.uniform(30, 60)
    pulses = 0.5 * (1 + np.cos(2 * np.pi * f0 * t)) ** 2
    gate = mask.astype(float)
    # soften gate edges over 50 ms; tapering stays inside the mask
    ramp = max(int(0.05 * fs), 1)
    edges = np.convolve(gate, np.ones(ramp) / ramp, mode="same")
    x = carrier * pulses * np.minimum(gate, edges)
    active = x[mask]
    rms = np.sqrt(np.mean(active**2)) if active.size else 0.0
    return (x * (level / rms) if rms > 0 else x), mask


def inject_noise(x, kinds, levels, rng, **kwargs):
    """Add the requested noise kinds to a Uniform- or TimestampedSignal.

    ``kinds`` and ``levels`` are parallel sequences (``levels`` may also be
    a dict keyed by kind). A zero level adds nothing, so all-zero levels
    return the input samples unchanged.
    """
    if isinstance(levels, dict):
        levels = [levels[k] for k in kinds]
    kinds = list(kinds)
    levels = [float(v) for v in levels]
    if len(kinds) != len(levels):
        raise ValueError("kinds and levels must have equal length")
    for k, lv in zip(kinds, levels):
        if k not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {k!r}; expected one of {NOISE_KINDS}")
        if lv < 0:
            raise ValueError(f"noise level for {k!r} must be non-negative")
    if isinstance(x, TimestampedSignal):
        fs = x.nominal_rate
    else:
        fs = x.rate
    samples = np.asarray(x.samples)
    if not any(lv > 0 for lv in levels):
        return x
    n = len(samples)
    total = np.zeros(n)
    for k, lv in zip(kinds, levels):
        if lv > 0:
            total += noise_component(k, n, fs, lv, rng, **kwargs)[0]
    noisy = (samples.astype(np.float64) + (total if samples.ndim == 1 else total[:, None])).astype(samples.dtype)
    if isinstance(x, TimestampedSignal):
        return TimestampedSignal(noisy, x.timestamps, x.nominal_rate)
    return x.with_samples(noisy)


# -- paired recordings ------------------------------------------------------


def gen_paired_recording(profile, day_model=None, day=0, duration=60.0, subject_id=None, positions=POSITIONS, start_tick=None):
    """Six paired channels driven by one beat sequence.

    Returns the Recording and a ``position -> BeatAnnotations`` dict (the
    annotations are shared; vibration propagation delays are not applied
    to them).
    """
    profile = profile.validate()
    if duration < 30:
        raise ValueError("duration must be at least 30 s")
    day_model = day_model or DayDriftModel()
    hr_f, gain_f, noise_f = day_model.factors(day)
    root = np.random.SeedSequence([profile.rng_seed, day])
    beat_rng, ann_rng, *pos_seeds = root.spawn(2 + 2 * len(positions))
    epoch = int(day) * DAY_TICKS if start_tick is None else int(start_tick)
    beats = gen_beat_times(profile, duration, np.random.default_rng(beat_rng), epoch, hr_scale=hr_f)
    ann = annotate_beats(beats, profile, np.random.default_rng(ann_rng))
    n_ecg = int(round(duration * ECG_RATE))
    n_vib = int(round(duration * VIB_RATE))
    channels = []
    for i, pos in enumerate(positions):
        ecg_rng = np.random.default_rng(pos_seeds[2 * i])
        vib_rng = np.random.default_rng(pos_seeds[2 * i + 1])
        ecg, _ = gen_ecg(beats, pos, ECG_RATE, epoch, n_ecg, ann)
        ecg = inject_noise(
            ecg,
            ("baseline", "powerline", "white"),
            (profile.ecg_baseline_level, profile.ecg_powerline_level, profile.ecg_noise),
            ecg_rng,
        )
        vib = gen_vibration(beats, ann, profile, VIB_RATE, epoch, n_vib, pos, vib_rng, gain_scale=gain_f)
        vib = inject_noise(
            vib,
            ("white", "snore", "motion"),
            (profile.sensor_noise, profile.snore_level * noise_f, profile.motion_level * noise_f),
            vib_rng,
            snore_probability=profile.snore_probability,
            motion_rate=profile.motion_rate,
        )
        channels.append(PairedChannel(pos, ecg, vib, ("z",)))
    meta = {
        "generator": "cardiosynth",
        "rng_seed": str(profile.rng_seed),
        "day_drift": f"{hr_f},{gain_f},{noise_f}",
        "duration_s": str(duration),
    }
    rec = Recording(subject_id or f"synth{profile.rng_seed}", int(day), tuple(channels), meta)
    if tuple(positions) == POSITIONS:
        rec.check()
    return rec, {pos: ann for pos in positions}


def with_overrides(profile, **kw):
    return replace(profile, **kw)
