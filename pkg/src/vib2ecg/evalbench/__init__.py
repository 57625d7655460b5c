"""Metrics, detectors and experiment protocols."""

from .detect import DetectedBeats, HeartSoundMarks, detect_heart_sounds, detect_qrs, shannon_envelope
from .hallucination import BeatReference, HallucinationVerdict, count_hallucinations, greedy_match
from .protocol import (
    CSV_COLUMNS,
    EvalReport,
    EvalRow,
    ExperimentResult,
    evaluate,
    l1_distance,
    run_ablation,
    run_temporal_generalization,
    sample_windows,
    summarize,
    temporal_from_datasets,
    train_on,
    typical_r_amplitude,
)
from .report import ablation_charts, bar_chart, line_chart, temporal_charts, write_svg

__all__ = [
    "BeatReference",
    "CSV_COLUMNS",
    "DetectedBeats",
    "EvalReport",
    "EvalRow",
    "ExperimentResult",
    "HallucinationVerdict",
    "HeartSoundMarks",
    "ablation_charts",
    "bar_chart",
    "count_hallucinations",
    "detect_heart_sounds",
    "detect_qrs",
    "evaluate",
    "greedy_match",
    "l1_distance",
    "line_chart",
    "run_ablation",
    "run_temporal_generalization",
    "sample_windows",
    "shannon_envelope",
    "summarize",
    "temporal_charts",
    "temporal_from_datasets",
    "train_on",
    "typical_r_amplitude",
    "write_svg",
]
