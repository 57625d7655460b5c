"""Beat matching and the QRS / heart-sound consistency check."""

from dataclasses import dataclass

import numpy as np

from ..sigproc import TICK_HZ
from .detect import DetectedBeats, HeartSoundMarks

TOLERANCE_SECONDS = 0.150
S2_GUARD_SECONDS = 0.100


@dataclass(frozen=True)
class HallucinationVerdict:
    hallucinations: int
    misses: int
    matched: int = 0
    flagged_s2: int = 0

    @property
    def any_hallucination(self):
        return self.hallucinations > 0


@dataclass(frozen=True)
class BeatReference:
    """Reference events as sample indices of one window.

    ``systole`` holds the markers predicted R-peaks must match (true R-peaks
    when known, otherwise S1 onsets). Entries may lie outside the window so
    that beats near an edge can still be matched.
    """

    systole: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    length: int = None

    @classmethod
    def from_annotations(cls, ann, start_tick, length, rate=1000, margin=TOLERANCE_SECONDS):
        step = TICK_HZ / rate
        lo, hi = -margin * rate, length + margin * rate

        def pick(ticks):
            idx = (np.asarray(ticks, dtype=np.int64) - int(start_tick)) / step
            return np.round(idx[(idx >= lo) & (idx < hi)]).astype(np.int64)

        return cls(pick(ann.r_peaks), pick(ann.s1_onsets), pick(ann.s2_onsets), length)

    @classmethod
    def from_marks(cls, marks, length=None):
        s1 = np.asarray(marks.s1, dtype=np.int64)
        return cls(s1, s1, np.asarray(marks.s2, dtype=np.int64), length)


def greedy_match(pred, ref, tol):
    """Maximum matching of two point sets where a pair needs ``|p - r| <= tol``.

    Both inputs are sorted first; a two-pointer sweep then pairs the
    leftmost compatible points, which is optimal for this interval
    structure. Returns ``(pred_index, ref_index)`` pairs into the sorted
    arrays together with the sort orders.
    """
    p_order = np.argsort(pred, kind="stable")
    r_order = np.argsort(ref, kind="stable")
    p = np.asarray(pred)[p_order]
    r = np.asarray(ref)[r_order]
    pairs = []
    i = j = 0
    while i < len(p) and j < len(r):
        if p[i] < r[j] - tol:
            i += 1
        elif r[j] < p[i] - tol:
            j += 1
        else:
            pairs.append((int(p_order[i]), int(r_order[j])))
            i += 1
            j += 1
    return pairs


def count_hallucinations(pred_beats, reference, tolerance=TOLERANCE_SECONDS, rate=1000, s2_guard=S2_GUARD_SECONDS):
    """Score predicted R-peaks against a reference.

    A prediction within ``s2_guard`` of an S2 mark and farther than
    ``tolerance`` from every S1 is a hallucination outright. The remaining
    predictions are matched one-to-one with the systole markers within
    ``tolerance``; unmatched predictions are hallucinations and unmatched
    markers inside the window are misses.
    """
    if isinstance(reference, HeartSoundMarks):
        reference = BeatReference.from_marks(reference)
    pred = np.asarray(pred_beats.r_peaks if isinstance(pred_beats, DetectedBeats) else pred_beats, dtype=np.int64)
    tol = tolerance * rate
    guard = s2_guard * rate
    s1 = np.asarray(reference.s1, dtype=np.int64)
    s2 = np.asarray(reference.s2, dtype=np.int64)
    flagged = np.zeros(len(pred), dtype=bool)
    if len(s2) and len(pred):
        near_s2 = np.min(np.abs(pred[:, None] - s2[None, :]), axis=1) <= guard
        far_s1 = np.min(np.abs(pred[:, None] - s1[None, :]), axis=1) > tol if len(s1) else np.ones(len(pred), bool)
        flagged = near_s2 & far_s1
    kept = pred[~flagged]
    ref = np.asarray(reference.systole, dtype=np.int64)
    pairs = greedy_match(kept, ref, tol)
    matched_ref = np.zeros(len(ref), dtype=bool)
    for _, j in pairs:
        matched_ref[j] = True
    inside = np.ones(len(ref), dtype=bool)
    if reference.length is not None:
        inside = (ref >= 0) & (ref < reference.length)
    return HallucinationVerdict(
        hallucinations=int(flagged.sum()) + len(kept) - len(pairs),
        misses=int(np.sum(inside & ~matched_ref)),
        matched=len(pairs),
        flagged_s2=int(flagged.sum()),
    )
