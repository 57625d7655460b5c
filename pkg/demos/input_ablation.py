"""Train one U-Net per input mode on the same subject and compare L1 and hallucination rates.

    python demos/input_ablation.py [--minutes 20] [--epochs 8] [--out ablation_demo]

The subject is calibrated so that S2 sometimes rivals S1 in loudness, the
situation in which a PCGL-only model starts drawing QRS complexes in
diastole. The defaults reproduce the reference desk-scale run (about seven
minutes per mode on one core); ``--minutes 5 --epochs 3`` gives a quick look.
"""

import argparse
import os
import time

from vib2ecg import cardiosynth as cs
from vib2ecg import datastore as ds
from vib2ecg import model as vm
from vib2ecg.evalbench import ablation_charts, run_ablation, summarize, write_svg


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--minutes", type=float, default=20.0)
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--modes", default="SCG,PCGL,RAW,BOTH")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="ablation_demo")
    args = ap.parse_args()

    profile = cs.SubjectProfile(s2_amplitude_mean=0.7, s2_over_s1_jitter=0.2, snore_probability=0.3, rng_seed=args.seed)
    rec, anns = cs.gen_paired_recording(profile, duration=args.minutes * 60)
    data = ds.split_channel(ds.prepare_channel(rec.channel("V4")), rec.subject_id, 0, train_stride=3000)
    print(f"V4: {len(data.train)} training, {len(data.validation)} validation, {len(data.test)} test windows")

    started = time.time()

    def progress(epoch, train_l1, val_l1):
        print(f"  epoch {epoch:2d}  train {train_l1:.4f}  val {val_l1:.4f}  ({time.time() - started:.0f} s)")

    tcfg = vm.TrainConfig(max_epochs=args.epochs, patience=args.epochs, batch_size=8, seed=args.seed)
    result = run_ablation(data, tuple(args.modes.split(",")), tcfg, annotations=anns["V4"], seed=args.seed, progress=progress)

    print("\nmode   test L1   hallucinating windows")
    for mode, row in summarize(result.report).items():
        print(f"{mode:<5}  {row['mean_l1']:.4f}    {100 * row['hallucination_pct']:5.1f}%")

    os.makedirs(args.out, exist_ok=True)
    result.report.to_csv(os.path.join(args.out, "report.csv"))
    l1, hall = ablation_charts(summarize(result.report))
    write_svg(os.path.join(args.out, "l1.svg"), l1)
    write_svg(os.path.join(args.out, "hallucination.svg"), hall)
    print(f"\nreport and charts written to {args.out}/")


if __name__ == "__main__":
    main()
