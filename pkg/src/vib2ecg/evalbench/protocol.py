"""Evaluation protocols: L1 and hallucination scoring, input ablation, temporal study."""

import csv
import logging
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .. import datastore, model as vm
from ..sigproc import UniformSignal
from .detect import detect_heart_sounds, detect_qrs
from .hallucination import BeatReference, count_hallucinations

logger = logging.getLogger(__name__)

SAMPLE_SIZE = 310
MIN_PEAK_FRACTION = 0.5


def l1_distance(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shapes differ: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ValueError("empty input")
    return float(np.mean(np.abs(pred - target)))


@dataclass(frozen=True)
class EvalRow:
    subject_id: str
    position: str
    input_mode: str
    day: int
    mean_l1: float
    hallucination_pct: float
    n_windows: int
    n_sampled: int
    hallucinated_windows: int
    hallucinated_beats: int
    missed_beats: int
    reference_beats: int
    seed: int = 0


CSV_COLUMNS = tuple(f.name for f in fields(EvalRow))


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.rows)

    def __len__(self):
        return len(self.rows)

    def extend(self, other):
        self.rows.extend(other.rows)
        return self

    def where(self, **kw):
        return EvalReport([r for r in self.rows if all(getattr(r, k) == v for k, v in kw.items())])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])

    @classmethod
    def from_csv(cls, path):
        types = {f.name: f.type for f in fields(EvalRow)}
        with open(path, newline="") as fh:
            rows = [EvalRow(**{k: types[k](v) for k, v in rec.items()}) for rec in csv.DictReader(fh)]
        return cls(rows)


def _fmt(v):
    return f"{v:.8g}" if isinstance(v, float) else v


def sample_windows(n, size=SAMPLE_SIZE, seed=0):
    """Sorted indices of a seeded uniform sample of ``min(size, n)`` windows."""
    if n <= size:
        return np.arange(n)
    return np.sort(np.random.default_rng(seed).choice(n, size=size, replace=False))


def typical_r_amplitude(segments, ecg_scale=1.0):
    """Median |R| of the (scaled) target ECG, from detected beats."""
    amps = []
    for s in segments:
        y = s.ecg / ecg_scale
        beats = detect_qrs(UniformSignal(y, 1000))
        amps.extend(np.abs(y[beats.r_peaks] - np.median(y)))
    return float(np.median(amps)) if amps else 0.0


def _reference(segment, annotations):
    ann = None
    if annotations is not None:
        ann = annotations.get((segment.subject_id, segment.day_index)) if isinstance(annotations, dict) else annotations
    if ann is not None:
        return BeatReference.from_annotations(ann, segment.start_tick, len(segment.ecg))
    marks = detect_heart_sounds(UniformSignal(segment.pcgl, 1000))
    return BeatReference(marks.s1, marks.s1, marks.s2, len(segment.ecg))


def evaluate(
    model,
    segments,
    input_mode,
    ecg_scale=1.0,
    sample_size=SAMPLE_SIZE,
    seed=0,
    annotations=None,
    min_peak=None,
    predictions=None,
):
    """L1 over every window and hallucination rate over a seeded sample.

    ``annotations`` maps ``(subject_id, day_index)`` to generator
    annotations (or is a single annotation set); without them the S1/S2
    marks detected in each window's PCGL band are the reference.
    ``min_peak`` is the amplitude floor for predicted R-peaks, in target
    units; by default half the typical R amplitude of the targets.
    ``predictions`` skips inference when reconstructions are already known.
    Returns one row per (subject, position, day) present in ``segments``.
    """
    if not segments:
        raise ValueError("no segments to evaluate")
    if predictions is None:
        predictions = vm.predict_many(model, segments, input_mode)
    predictions = np.asarray(predictions)
    if min_peak is None:
        min_peak = MIN_PEAK_FRACTION * typical_r_amplitude(segments, ecg_scale)
    groups = {}
    for i, s in enumerate(segments):
        groups.setdefault((s.subject_id, s.position, s.day_index), []).append(i)
    report = EvalReport()
    for (subject, position, day), idx in groups.items():
        l1 = np.mean([l1_distance(predictions[i], segments[i].ecg / ecg_scale) for i in idx])
        picked = sample_windows(len(idx), sample_size, seed)
        bad_windows = fake = missed = n_ref = 0
        for k in picked:
            seg = segments[idx[k]]
            beats = detect_qrs(UniformSignal(predictions[idx[k]], 1000), min_peak=min_peak)
            ref = _reference(seg, annotations)
            verdict = count_hallucinations(beats, ref)
            bad_windows += verdict.any_hallucination
            fake += verdict.hallucinations
            missed += verdict.misses
            n_ref += int(np.sum((ref.systole >= 0) & (ref.systole < len(seg.ecg))))
        report.rows.append(
            EvalRow(
                subject_id=subject,
                position=position,
                input_mode=input_mode,
                day=int(day),
                mean_l1=float(l1),
                hallucination_pct=bad_windows / len(picked),
                n_windows=len(idx),
                n_sampled=len(picked),
                hallucinated_windows=int(bad_windows),
                hallucinated_beats=int(fake),
                missed_beats=int(missed),
                reference_beats=n_ref,
                seed=int(seed),
            )
        )
    return report


@dataclass
class ExperimentResult:
    report: EvalReport
    models: dict = field(default_factory=dict)
    histories: dict = field(default_factory=dict)


def train_on(dataset, tcfg, ucfg=None, progress=None):
    """Build and train one model on a SplitDataset; returns (best model, history)."""
    ucfg = replace(ucfg or vm.UNetConfig(), in_channels=tcfg.in_channels)
    net = vm.build_model(ucfg, seed=tcfg.seed)
    return vm.train(net, dataset.train, dataset.validation, tcfg, dataset.ecg_scale, progress)


def run_ablation(dataset, modes=vm.INPUT_MODES, tcfg=None, annotations=None, sample_size=SAMPLE_SIZE, seed=0, ucfg=None, progress=None):
    """Train one model per input mode on identical data and seed; evaluate each on the test split."""
    tcfg = tcfg or vm.TrainConfig()
    min_peak = MIN_PEAK_FRACTION * typical_r_amplitude(dataset.train, dataset.ecg_scale)
    result = ExperimentResult(EvalReport())
    for mode in modes:
        cfg = replace(tcfg, input_mode=mode)
        logger.info("ablation: training %s", mode)
        best, hist = train_on(dataset, cfg, ucfg, progress)
        rep = evaluate(best, dataset.test, mode, dataset.ecg_scale, sample_size, seed, annotations, min_peak)
        result.report.extend(rep)
        result.models[mode] = best
        result.histories[mode] = hist
    return result


def run_temporal_generalization(
    recordings,
    position,
    tcfg=None,
    annotations=None,
    sample_size=SAMPLE_SIZE,
    seed=0,
    ucfg=None,
    train_stride=datastore.DEFAULT_TRAIN_STRIDE,
    progress=None,
):
    """Train on day 0, test on the day-0 test split and on every later day in full.

    ``recordings`` is a sequence of Recordings of one subject ordered by day
    (at least two). Later days are scaled with the day-0 training scale.
    """
    recordings = sorted(recordings, key=lambda r: r.day_index)
    if len(recordings) < 2:
        raise ValueError("temporal generalization needs at least two days")
    first = recordings[0]
    day0 = datastore.split_channel(
        datastore.prepare_channel(first.channel(position)), first.subject_id, first.day_index, train_stride
    )
    later = {r.day_index: datastore.segment_recording(r, position) for r in recordings[1:]}
    return temporal_from_datasets(day0, later, tcfg, annotations, sample_size, seed, ucfg, progress)


def temporal_from_datasets(day0, later, tcfg=None, annotations=None, sample_size=SAMPLE_SIZE, seed=0, ucfg=None, progress=None):
    """Temporal study on prepared data: ``day0`` is a SplitDataset, ``later`` maps day to segments."""
    if not later:
        raise ValueError("temporal generalization needs at least two days")
    tcfg = tcfg or vm.TrainConfig()
    best, hist = train_on(day0, tcfg, ucfg, progress)
    min_peak = MIN_PEAK_FRACTION * typical_r_amplitude(day0.train, day0.ecg_scale)
    result = ExperimentResult(EvalReport(), {"day0": best}, {"day0": hist})
    result.report.extend(evaluate(best, day0.test, tcfg.input_mode, day0.ecg_scale, sample_size, seed, annotations, min_peak))
    for day in sorted(later):
        segs = later[day]
        if not segs:
            logger.warning("day %d has no complete window; skipped", day)
            continue
        result.report.extend(evaluate(best, segs, tcfg.input_mode, day0.ecg_scale, sample_size, seed, annotations, min_peak))
    return result


def summarize(report, key="input_mode"):
    """Mean L1 and hallucination rate per value of ``key`` (insertion order)."""
    out = {}
    for r in report:
        out.setdefault(getattr(r, key), []).append(r)
    return {
        k: {"mean_l1": float(np.mean([r.mean_l1 for r in rs])), "hallucination_pct": float(np.mean([r.hallucination_pct for r in rs]))}
        for k, rs in out.items()
    }


def row_dict(row):
    return asdict(row)
