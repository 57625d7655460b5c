"""Recording containers, the on-disk recording format, windowing and splits.

A recording directory holds ``manifest.json`` plus one binary file per
stream. Binary stream layout (little-endian)::

    b"VIB2" | version u16 | kind u8 (0 uniform, 1 timestamped)
            | channel count u8 | sample count u64
    kind 0: rate f64 | start tick u64 | samples f32 * (count * channels)
    kind 1: count * (tick u64 | f32 * channels)

Samples are stored as float32, so in-memory recordings built from float32
arrays round-trip bit-exactly.
"""

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import sigproc
from .sigproc import TimestampedSignal, UniformSignal

POSITIONS = ("V1", "V2", "V3", "V4", "V5", "V6")
MAGIC = b"VIB2"
FORMAT_VERSION = 1
KIND_UNIFORM = 0
KIND_TIMESTAMPED = 1
SEGMENT_LEN = 3000
DEFAULT_TRAIN_STRIDE = 1500
_HEADER = struct.Struct("<4sHBBQ")
_TS_DTYPE_CACHE = {}


class FormatError(ValueError):
    """A recording file or manifest is malformed."""


class RecordingInvariantError(ValueError):
    pass


class SplitTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class PairedChannel:
    position: str
    ecg: UniformSignal
    vib: TimestampedSignal
    axis_labels: tuple = ("z",)

    def vib_axis(self, label=None):
        """Single-axis vibration; defaults to the chest-normal axis ``z`` when present."""
        labels = list(self.axis_labels)
        if label is None:
            label = "z" if "z" in labels else labels[0]
        return self.vib.axis(labels.index(label))

    def check(self):
        if self.position not in POSITIONS:
            raise RecordingInvariantError(f"unknown position {self.position!r}")
        n_axes = 1 if self.vib.samples.ndim == 1 else self.vib.samples.shape[1]
        if n_axes != len(self.axis_labels):
            raise RecordingInvariantError(f"{self.position}: {n_axes} axes but labels {self.axis_labels}")
        ecg_t = self.ecg.ticks()
        e0, e1 = int(ecg_t[0]), int(ecg_t[-1])
        v0, v1 = int(self.vib.timestamps[0]), int(self.vib.timestamps[-1])
        overlap = min(e1, v1) - max(e0, v0)
        shorter = min(e1 - e0, v1 - v0)
        if shorter <= 0 or overlap < 0.99 * shorter:
            raise RecordingInvariantError(f"{self.position}: ECG and vibration spans overlap too little")


@dataclass(frozen=True)
class Recording:
    subject_id: str
    day_index: int
    channels: tuple
    metadata: dict = field(default_factory=dict)

    def check(self):
        positions = [c.position for c in self.channels]
        if sorted(positions) != sorted(POSITIONS) or len(positions) != len(POSITIONS):
            raise RecordingInvariantError(f"need exactly one channel per position {POSITIONS}, got {positions}")
        if self.day_index < 0:
            raise RecordingInvariantError("day_index must be non-negative")
        for c in self.channels:
            c.check()
        return self

    def channel(self, position):
        for c in self.channels:
            if c.position == position:
                return c
        raise KeyError(position)

    def equals(self, other):
        """Bit-exact comparison of every stream and field."""
        if (self.subject_id, self.day_index, self.metadata) != (other.subject_id, other.day_index, other.metadata):
            return False
        if [c.position for c in self.channels] != [c.position for c in other.channels]:
            return False
        for a, b in zip(self.channels, other.channels):
            if a.axis_labels != b.axis_labels:
                return False
            if a.ecg.rate != b.ecg.rate or a.ecg.start_tick != b.ecg.start_tick:
                return False
            if a.vib.nominal_rate != b.vib.nominal_rate:
                return False
            for x, y in ((a.ecg.samples, b.ecg.samples), (a.vib.samples, b.vib.samples), (a.vib.timestamps, b.vib.timestamps)):
                if x.shape != y.shape or x.dtype != y.dtype or x.tobytes() != y.tobytes():
                    return False
        return True


@dataclass(frozen=True)
class Segment:
    scg: np.ndarray
    pcgl: np.ndarray
    raw: np.ndarray
    ecg: np.ndarray
    position: str
    segment_index: int
    subject_id: str = ""
    day_index: int = 0
    start_tick: int = 0

    def __post_init__(self):
        for name in ("scg", "pcgl", "raw", "ecg"):
            a = np.asarray(getattr(self, name), dtype=np.float32)
            if a.shape != (SEGMENT_LEN,):
                raise ValueError(f"{name} must have {SEGMENT_LEN} samples, got {a.shape}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} contains non-finite values")
            object.__setattr__(self, name, a)


@dataclass(frozen=True)
class SplitAssignment:
    train: list
    validation: list
    test: list


# -- binary streams ---------------------------------------------------------


def encode_uniform(sig):
    samples = np.asarray(sig.samples)
    channels = 1 if samples.ndim == 1 else samples.shape[1]
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, KIND_UNIFORM, channels, len(samples))
    return head + struct.pack("<dQ", float(sig.rate), int(sig.start_tick)) + samples.astype("<f4").tobytes()


def _ts_dtype(channels):
    if channels not in _TS_DTYPE_CACHE:
        _TS_DTYPE_CACHE[channels] = np.dtype([("tick", "<u8"), ("values", "<f4", (channels,))])
    return _TS_DTYPE_CACHE[channels]


def encode_timestamped(sig):
    samples = np.asarray(sig.samples)
    channels = 1 if samples.ndim == 1 else samples.shape[1]
    rec = np.empty(len(samples), dtype=_ts_dtype(channels))
    rec["tick"] = sig.timestamps
    rec["values"] = samples.reshape(len(samples), channels)
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, KIND_TIMESTAMPED, channels, len(samples))
    return head + rec.tobytes()


def decode_stream(buf, nominal_rate=None, where="<bytes>"):
    """Parse one binary stream into a UniformSignal or TimestampedSignal."""
    if len(buf) < _HEADER.size:
        raise FormatError(f"{where}: file too short for header")
    magic, version, kind, channels, count = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"{where}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{where}: unsupported version {version}")
    if channels < 1:
        raise FormatError(f"{where}: zero channels")
    body = memoryview(buf)[_HEADER.size :]
    if kind == KIND_UNIFORM:
        need = 16 + 4 * count * channels
        if len(body) != need:
            raise FormatError(f"{where}: expected {need} payload bytes, found {len(body)}")
        rate, start = struct.unpack_from("<dQ", body)
        if not (np.isfinite(rate) and rate > 0):
            raise FormatError(f"{where}: invalid rate {rate}")
        samples = np.frombuffer(body[16:], dtype="<f4").astype(np.float32)
        if channels > 1:
            samples = samples.reshape(count, channels)
        return UniformSignal(samples, rate, start)
    if kind == KIND_TIMESTAMPED:
        dt = _ts_dtype(channels)
        if len(body) != dt.itemsize * count:
            raise FormatError(f"{where}: expected {dt.itemsize * count} payload bytes, found {len(body)}")
        rec = np.frombuffer(body, dtype=dt)
        ticks = rec["tick"].astype(np.uint64)
        values = rec["values"].astype(np.float32)
        if channels == 1:
            values = values[:, 0]
        if nominal_rate is None:
            raise FormatError(f"{where}: timestamped stream needs a nominal rate from the manifest")
        try:
            return TimestampedSignal(values, ticks, nominal_rate)
        except ValueError as exc:
            raise FormatError(f"{where}: {exc}") from exc
    raise FormatError(f"{where}: unknown stream kind {kind}")


# -- recording directories --------------------------------------------------


def _stream_names(position):
    return f"{position}_ecg.bin", f"{position}_vib.bin"


def write_recording(r, path):
    """Write ``r`` as a recording directory at ``path`` (created if needed)."""
    r.check()
    os.makedirs(path, exist_ok=True)
    channels = []
    for c in r.channels:
        ecg_name, vib_name = _stream_names(c.position)
        with open(os.path.join(path, ecg_name), "wb") as fh:
            fh.write(encode_uniform(c.ecg))
        with open(os.path.join(path, vib_name), "wb") as fh:
            fh.write(encode_timestamped(c.vib))
        channels.append(
            {
                "position": c.position,
                "ecg_file": ecg_name,
                "vib_file": vib_name,
                "ecg_rate": c.ecg.rate,
                "vib_nominal_rate": c.vib.nominal_rate,
                "axis_labels": list(c.axis_labels),
            }
        )
    manifest = {
        "format_version": FORMAT_VERSION,
        "subject_id": r.subject_id,
        "day_index": r.day_index,
        "positions": [c.position for c in r.channels],
        "tick_hz": sigproc.TICK_HZ,
        "tick_epoch": int(min(c.ecg.start_tick for c in r.channels)),
        "channels": channels,
        "metadata": {str(k): str(v) for k, v in r.metadata.items()},
    }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_recording(path):
    mpath = os.path.join(path, "manifest.json")
    try:
        with open(mpath) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise FormatError(f"{mpath}: missing manifest") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{mpath}: {exc}") from exc
    try:
        if manifest["format_version"] != FORMAT_VERSION:
            raise FormatError(f"{mpath}: unsupported format version {manifest['format_version']}")
        if manifest.get("tick_hz", sigproc.TICK_HZ) != sigproc.TICK_HZ:
            raise FormatError(f"{mpath}: tick clock must be {sigproc.TICK_HZ} Hz")
        channels = []
        for ch in manifest["channels"]:
            streams = []
            for key, rate in (("ecg_file", None), ("vib_file", ch["vib_nominal_rate"])):
                fpath = os.path.join(path, ch[key])
                with open(fpath, "rb") as fh:
                    streams.append(decode_stream(fh.read(), rate, fpath))
            ecg, vib = streams
            if not isinstance(ecg, UniformSignal) or not isinstance(vib, TimestampedSignal):
                raise FormatError(f"{path}: {ch['position']} streams have the wrong kinds")
            channels.append(PairedChannel(ch["position"], ecg, vib, tuple(ch["axis_labels"])))
        r = Recording(manifest["subject_id"], int(manifest["day_index"]), tuple(channels), dict(manifest.get("metadata", {})))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{mpath}: missing or malformed field {exc}") from exc
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    try:
        return r.check()
    except RecordingInvariantError as exc:
        raise FormatError(f"{path}: {exc}") from exc


# -- windowing --------------------------------------------------------------


@dataclass(frozen=True)
class PreparedChannel:
    """Aligned 1000 Hz streams of one position, before per-window normalization."""

    ecg: np.ndarray
    raw: np.ndarray
    scg: np.ndarray
    pcgl: np.ndarray
    start_tick: int
    position: str


def prepare_channel(channel, axis=None):
    """Filter the ECG, decompose the vibration and align everything to the ECG ticks."""
    ecg = sigproc.preprocess_ecg(channel.ecg)
    vib = channel.vib_axis(axis)
    ticks = channel.ecg.ticks()
    uni = vib.as_uniform()
    raw = sigproc.highpass_vibration(uni)
    bands = sigproc.decompose_vibration(uni)

    def align(u):
        return sigproc.align_to_ecg(TimestampedSignal(u.samples, vib.timestamps, vib.nominal_rate), ticks).samples

    return PreparedChannel(
        ecg=ecg.samples,
        raw=align(raw),
        scg=align(bands.scg),
        pcgl=align(bands.pcgl),
        start_tick=int(ticks[0]),
        position=channel.position,
    )


def window_starts(n, stride, length=SEGMENT_LEN, lo=0):
    if stride < 1:
        raise ValueError("stride must be at least 1")
    if n - lo < length:
        return []
    return list(range(lo, n - length + 1, stride))


def _make_segment(p, start, index, subject_id, day_index):
    sl = slice(start, start + SEGMENT_LEN)
    return Segment(
        scg=sigproc.zscore(p.scg[sl]),
        pcgl=sigproc.zscore(p.pcgl[sl]),
        raw=sigproc.zscore(p.raw[sl]),
        ecg=p.ecg[sl],
        position=p.position,
        segment_index=index,
        subject_id=subject_id,
        day_index=day_index,
        start_tick=p.start_tick + start * int(sigproc.TICK_HZ // 1000),
    )


def segment_prepared(p, stride=SEGMENT_LEN, subject_id="", day_index=0, lo=0, hi=None):
    hi = len(p.ecg) if hi is None else hi
    starts = window_starts(hi, stride, lo=lo)
    return [_make_segment(p, s, i, subject_id, day_index) for i, s in enumerate(starts)]


def segment_recording(r, position, stride=SEGMENT_LEN, axis=None):
    """3000-sample windows of one position; a trailing partial window is dropped."""
    p = prepare_channel(r.channel(position), axis)
    return segment_prepared(p, stride, r.subject_id, r.day_index)


def temporal_split(segments):
    """Earliest 70% train, next 10% validation, remainder test (by position in ``segments``)."""
    n = len(segments)
    if n < 10:
        raise SplitTooSmall(f"need at least 10 segments to split, got {n}")
    n_train = int(np.floor(0.7 * n))
    n_val = int(np.floor(0.1 * n))
    idx = list(range(n))
    return SplitAssignment(idx[:n_train], idx[n_train : n_train + n_val], idx[n_train + n_val :])


@dataclass
class SplitDataset:
    train: list
    validation: list
    test: list
    ecg_scale: float


def ecg_scale_of(segments, q=95.0):
    """Robust target scale: the ``q``-th percentile of |ECG| over ``segments``."""
    vals = np.abs(np.concatenate([s.ecg for s in segments]))
    scale = float(np.percentile(vals, q))
    return scale if scale > 0 else 1.0


def split_channel(p, subject_id="", day_index=0, train_stride=DEFAULT_TRAIN_STRIDE):
    """Temporal 70/10/20 split of a prepared channel.

    The split is decided on non-overlapping windows; the training span is
    then re-windowed at ``train_stride`` without crossing into validation.
    """
    base = segment_prepared(p, SEGMENT_LEN, subject_id, day_index)
    split = temporal_split(base)
    train_end = (split.train[-1] + 1) * SEGMENT_LEN
    train = segment_prepared(p, train_stride, subject_id, day_index, lo=0, hi=train_end)
    val = [base[i] for i in split.validation]
    test = [base[i] for i in split.test]
    return SplitDataset(train, val, test, ecg_scale_of(train))


def pool_splits(datasets):
    """One dataset from several positions; the target scale is recomputed on the pooled training set."""
    datasets = list(datasets)
    if not datasets:
        raise ValueError("nothing to pool")
    train = [s for d in datasets for s in d.train]
    val = [s for d in datasets for s in d.validation]
    test = [s for d in datasets for s in d.test]
    return SplitDataset(train, val, test, ecg_scale_of(train))


# -- segment sets -------------------------------------------------------------

SEGMENT_ARRAYS = ("scg", "pcgl", "raw", "ecg")


def save_segments(segments, path):
    """Write segments as ``{scg,pcgl,raw,ecg}.npy`` (n x 3000 float32) plus ``segments.json``."""
    os.makedirs(path, exist_ok=True)
    for name in SEGMENT_ARRAYS:
        arr = np.stack([getattr(s, name) for s in segments]) if segments else np.zeros((0, SEGMENT_LEN), np.float32)
        np.save(os.path.join(path, f"{name}.npy"), arr.astype(np.float32), allow_pickle=False)
    meta = [
        {
            "position": s.position,
            "segment_index": int(s.segment_index),
            "subject_id": s.subject_id,
            "day_index": int(s.day_index),
            "start_tick": int(s.start_tick),
        }
        for s in segments
    ]
    with open(os.path.join(path, "segments.json"), "w") as fh:
        json.dump(meta, fh, indent=1)


def load_segments(path):
    try:
        arrays = {n: np.load(os.path.join(path, f"{n}.npy"), allow_pickle=False) for n in SEGMENT_ARRAYS}
        with open(os.path.join(path, "segments.json")) as fh:
            meta = json.load(fh)
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: cannot read segment set ({exc})") from exc
    n = len(meta)
    for name, arr in arrays.items():
        if arr.shape != (n, SEGMENT_LEN):
            raise FormatError(f"{path}: {name}.npy has shape {arr.shape}, expected ({n}, {SEGMENT_LEN})")
    try:
        return [Segment(**{k: arrays[k][i] for k in SEGMENT_ARRAYS}, **meta[i]) for i in range(n)]
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_split(dataset, path, all_segments=None):
    """Persist a SplitDataset as ``train/``, ``validation/``, ``test/`` (and ``all/``) plus ``split.json``."""
    for name in ("train", "validation", "test"):
        save_segments(getattr(dataset, name), os.path.join(path, name))
    if all_segments is not None:
        save_segments(all_segments, os.path.join(path, "all"))
    with open(os.path.join(path, "split.json"), "w") as fh:
        json.dump({"ecg_scale": dataset.ecg_scale, "sizes": [len(dataset.train), len(dataset.validation), len(dataset.test)]}, fh)


def load_split(path):
    try:
        with open(os.path.join(path, "split.json")) as fh:
            info = json.load(fh)
        scale = float(info["ecg_scale"])
    except (OSError, ValueError, KeyError) as exc:
        raise FormatError(f"{path}: not a prepared dataset ({exc})") from exc
    parts = [load_segments(os.path.join(path, n)) for n in ("train", "validation", "test")]
    return SplitDataset(*parts, ecg_scale=scale)
