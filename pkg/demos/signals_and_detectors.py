"""Walk through one synthetic night: energy split, band decomposition, detectors and the hallucination check.

    python demos/signals_and_detectors.py [--seconds 120] [--seed 0]

Nothing is trained here; every number printed comes from the signal
pipeline and the generator's own annotations.
"""

import argparse

import numpy as np

from vib2ecg import cardiosynth as cs
from vib2ecg import datastore as ds
from vib2ecg import sigproc as sp
from vib2ecg.evalbench import BeatReference, count_hallucinations, detect_heart_sounds, detect_qrs


def hit_rate(found, truth, tol=50):
    truth = truth[(truth > tol) & (truth < truth.max() - tol)] if len(truth) else truth
    if not len(truth) or not len(found):
        return 0.0
    return float(np.mean([np.min(np.abs(found - t)) <= tol for t in truth]))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seconds", type=float, default=120.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    profile = cs.SubjectProfile(rng_seed=args.seed)
    rec, anns = cs.gen_paired_recording(profile, duration=args.seconds)
    print(f"subject {rec.subject_id}, day {rec.day_index}, {args.seconds:.0f} s, {len(rec.channels)} chest positions\n")

    # most of the vibration energy sits in the SCG band
    print("position  energy<20Hz  QRS hit  S1 hit  S2 hit")
    for ch in rec.channels:
        frac = sp.band_energy_fraction(ch.vib.as_uniform(), sp.SPLIT_HZ)
        prepared = ds.prepare_channel(ch)
        truth = anns[ch.position].to_indices(prepared.start_tick)
        qrs = detect_qrs(sp.UniformSignal(prepared.ecg, 1000))
        sounds = detect_heart_sounds(sp.UniformSignal(prepared.pcgl, 1000))
        print(
            f"{ch.position:>8}  {frac:11.4f}  {hit_rate(qrs.r_peaks, truth['r_peaks']):7.3f}"
            f"  {hit_rate(sounds.s1, truth['s1_onsets']):6.3f}  {hit_rate(sounds.s2, truth['s2_onsets']):6.3f}"
        )

    # one 3 s window and a reconstruction that invents a beat during diastole
    ch = rec.channel("V4")
    seg = ds.segment_recording(rec, "V4")[5]
    ref = BeatReference.from_annotations(anns["V4"], seg.start_tick, len(seg.ecg))
    true_beats = ref.systole[(ref.systole >= 0) & (ref.systole < len(seg.ecg))]
    s2_inside = ref.s2[(ref.s2 >= 0) & (ref.s2 < len(seg.ecg))]
    faked = np.sort(np.append(true_beats, s2_inside[:1] + 20))
    print(f"\nwindow 5 of {ch.position}: true R-peaks at {true_beats.tolist()}")
    print(f"a prediction with an extra peak at {int(s2_inside[0]) + 20} (20 ms after an S2 mark):")
    verdict = count_hallucinations(faked, ref)
    print(f"  hallucinations={verdict.hallucinations} (flagged near S2: {verdict.flagged_s2}), misses={verdict.misses}")
    verdict = count_hallucinations(true_beats[:-1], ref)
    print(f"dropping the last beat instead: hallucinations={verdict.hallucinations}, misses={verdict.misses}")


if __name__ == "__main__":
    main()
