"""R-peak and heart-sound detectors for 1000 Hz signals."""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, signal

from .. import sigproc

QRS_BAND = (5.0, 15.0)
MWI_SECONDS = 0.150
REFRACTORY_SECONDS = 0.200
REFINE_SECONDS = 0.050
LEARN_SECONDS = 2.0
SEARCHBACK_FACTOR = 1.66
T_WAVE_SECONDS = 0.360

HS_SMOOTH_SECONDS = 0.020
HS_MIN_GAP_SECONDS = 0.120
HS_ONSET_FRACTION = 0.3


@dataclass(frozen=True)
class DetectedBeats:
    r_peaks: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    confidence: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self):
        return len(self.r_peaks)


@dataclass(frozen=True)
class HeartSoundMarks:
    s1: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    s2: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def _moving_average(x, width):
    return ndimage.uniform_filter1d(x, max(int(width), 1), mode="constant")


def _bandpass(x, band, rate):
    spec = sigproc.FilterSpec("band-pass", 2, band, rate)
    return sigproc.filter_zero_phase(sigproc.UniformSignal(x, rate), sigproc.design_filter(spec)).samples


def _refine(ecg, idx, half):
    lo, hi = max(idx - half, 0), min(idx + half + 1, len(ecg))
    return lo + int(np.argmax(np.abs(ecg[lo:hi])))


def detect_qrs(ecg, min_peak=0.0):
    """Pan-Tompkins style R-peak detection.

    Band-pass (5-15 Hz), derivative, squaring and a centred 150 ms moving
    window integration feed the classic dual adaptive thresholds with a
    200 ms refractory period, slope-based T-wave rejection within 360 ms
    and search-back after a missed beat. Each detection is moved to the
    largest ``|ecg|`` within +/-50 ms. Beats whose baseline-relative
    amplitude is below ``min_peak`` are discarded.
    """
    rate = ecg.rate
    if rate != 1000:
        raise ValueError(f"QRS detection expects 1000 Hz, got {rate}")
    x = np.asarray(ecg.samples, dtype=np.float64)
    if len(x) < 2 * rate:
        raise sigproc.SignalTooShort(f"need at least 2 s of ECG, got {len(x) / rate:.3f} s")
    x = x - np.median(x)
    if not np.any(x):
        return DetectedBeats()
    filtered = _bandpass(x, QRS_BAND, rate)
    slope = np.abs(np.gradient(filtered))
    mwi = _moving_average(slope**2, MWI_SECONDS * rate)
    refractory = int(REFRACTORY_SECONDS * rate)
    t_window = int(T_WAVE_SECONDS * rate)
    half_mwi = int(MWI_SECONDS * rate) // 2

    def max_slope(i):
        return slope[max(i - half_mwi, 0) : i + half_mwi + 1].max()

    peaks, _ = signal.find_peaks(mwi, distance=refractory)
    if len(peaks) == 0 or mwi.max() <= 0:
        return DetectedBeats()

    learn = mwi[: int(LEARN_SECONDS * rate)]
    spki = 0.25 * learn.max()
    npki = 0.5 * learn.mean()
    thr1 = npki + 0.25 * (spki - npki)
    beats, heights = [], []
    rr = []
    last = -refractory
    for i, pk in enumerate(peaks):
        h = mwi[pk]
        # a shallow peak soon after a beat is taken for its T wave
        t_wave = beats and pk - last < t_window and max_slope(pk) < 0.5 * max_slope(last)
        if h > thr1 and pk - last >= refractory and not t_wave:
            beats.append(pk)
            heights.append(h)
            spki = 0.125 * h + 0.875 * spki
            if len(beats) > 1:
                rr.append(beats[-1] - beats[-2])
            last = pk
        else:
            npki = 0.125 * h + 0.875 * npki
        thr1 = npki + 0.25 * (spki - npki)
        # search-back: a long gap means a beat fell below the primary threshold
        if rr and i + 1 < len(peaks) and peaks[i + 1] - last > SEARCHBACK_FACTOR * np.mean(rr[-8:]):
            thr2 = 0.5 * thr1
            cand = [p for p in peaks if last + refractory <= p < peaks[i + 1] and mwi[p] > thr2 and p not in beats]
            if cand:
                best = max(cand, key=lambda p: mwi[p])
                beats.append(best)
                heights.append(mwi[best])
                spki = 0.25 * mwi[best] + 0.75 * spki
                rr.append(best - last)
                last = best
    order = np.argsort(beats)
    beats = np.asarray(beats)[order]
    heights = np.asarray(heights)[order]

    half = int(REFINE_SECONDS * rate)
    refined = np.array([_refine(x, b, half) for b in beats], dtype=np.int64)
    amp = np.abs(x[refined]) if len(refined) else np.zeros(0)
    keep = amp >= min_peak
    refined, amp, heights = refined[keep], amp[keep], heights[keep]
    # refinement can pull two detections together; keep the larger one
    out, conf = [], []
    for r, a, h in zip(refined, amp, heights):
        if out and r - out[-1] < refractory:
            if a > np.abs(x[out[-1]]):
                out[-1], conf[-1] = r, h
            continue
        out.append(r)
        conf.append(h)
    conf = np.clip(np.asarray(conf) / (spki if spki > 0 else 1.0), 0.0, 1.0)
    return DetectedBeats(np.asarray(out, dtype=np.int64), conf)


def shannon_envelope(x, rate, smooth=HS_SMOOTH_SECONDS):
    """Smoothed Shannon energy of the peak-normalized signal."""
    x = np.asarray(x, dtype=np.float64)
    peak = np.max(np.abs(x)) if len(x) else 0.0
    if peak == 0:
        return np.zeros(len(x))
    e = (x / peak) ** 2
    se = -e * np.log(e + 1e-12)
    return _moving_average(se, smooth * rate)


def _label(peaks):
    """S1 where the following interval is shorter than the preceding one."""
    n = len(peaks)
    d = np.diff(peaks)
    labels = np.zeros(n, dtype=int)  # 1 = S1, 2 = S2
    for i in range(1, n - 1):
        labels[i] = 1 if d[i] < d[i - 1] else 2
    if n >= 2:
        labels[0] = 3 - labels[1] if n > 2 else 1
        labels[-1] = 3 - labels[-2]
    return labels


def detect_heart_sounds(pcgl, min_gap=HS_MIN_GAP_SECONDS):
    """S1/S2 onsets from the high band of the vibration signal.

    Peaks of the Shannon-energy envelope above an adaptive threshold are
    labelled by interval asymmetry (systole is shorter than diastole); an
    onset is where the envelope first rises above 30% of its peak value.
    """
    rate = pcgl.rate
    if rate != 1000:
        raise ValueError(f"heart-sound detection expects 1000 Hz, got {rate}")
    env = shannon_envelope(pcgl.samples, rate)
    if not np.any(env > 0):
        return HeartSoundMarks()
    base = np.median(env)
    top = np.percentile(env, 99)
    thr = base + 0.15 * (top - base)
    peaks, _ = signal.find_peaks(env, height=thr, distance=int(min_gap * rate))
    if len(peaks) < 3:
        return HeartSoundMarks()
    labels = _label(peaks)
    onsets = np.empty(len(peaks), dtype=np.int64)
    for k, pk in enumerate(peaks):
        level = base + HS_ONSET_FRACTION * (env[pk] - base)
        j = pk
        while j > 0 and env[j - 1] > level and pk - j < min_gap * rate:
            j -= 1
        onsets[k] = j
    return HeartSoundMarks(onsets[labels == 1], onsets[labels == 2])
