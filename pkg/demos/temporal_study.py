"""A week of nights through the command-line tools: synth, preprocess, tempgen.

    python demos/temporal_study.py [--work temporal_demo] [--minutes 10]

Day 0 trains the model and every later day is scored with it. The synth
step writes eight quiet nights; day 4 is then regenerated as a rough one
(snoring throughout, frequent movement, noise drift at its cap) with the
library, in the same on-disk layout. Its hallucination rate should stand
out while L1 stays roughly flat across the quiet days.
"""

import argparse
import csv
import json
import os
from dataclasses import replace

from vib2ecg import cardiosynth as cs
from vib2ecg import cli, config, datastore

CONFIG = """\
seed = {seed}

[synth]
subjects = 1
days = 8
duration = {seconds}

[synth.profile]
snore_probability = 0.1
ecg_baseline_level = 0.0

[preprocess]
positions = ["V4"]
train_stride = 3000

[train]
max_epochs = {epochs}
patience = {epochs}
batch_size = 8
"""
ROUGH_DAY = 4


def run(*argv):
    print("$ vib2ecg " + " ".join(argv))
    code = cli.main(list(argv))
    if code:
        raise SystemExit(code)


def rough_night(cfg_path, raw):
    cfg = config.load(cfg_path)
    profile = replace(cfg.profile(0), snore_probability=1.0, motion_level=0.01, motion_rate=12.0)
    drift = cs.DayDriftModel(noise=tuple(2.0 if d == ROUGH_DAY else 1.0 for d in range(ROUGH_DAY + 1)))
    rec, anns = cs.gen_paired_recording(profile, drift, ROUGH_DAY, cfg.synth.duration, subject_id="S00")
    path = os.path.join(raw, "S00", f"day{ROUGH_DAY}")
    datastore.write_recording(rec, path)
    with open(os.path.join(path, "annotations.json"), "w") as fh:
        json.dump({"subject_id": "S00", "day_index": ROUGH_DAY, "annotations": anns["V4"].to_json()}, fh)
    print(f"(day {ROUGH_DAY} regenerated as a rough night)")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", default="temporal_demo")
    ap.add_argument("--minutes", type=float, default=10.0)
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    os.makedirs(args.work, exist_ok=True)
    cfg = os.path.join(args.work, "week.toml")
    with open(cfg, "w") as fh:
        fh.write(CONFIG.format(seed=args.seed, seconds=args.minutes * 60, epochs=args.epochs))

    raw, prep, out = (os.path.join(args.work, d) for d in ("raw", "prepared", "tempgen"))
    run("synth", "--config", cfg, "--out", raw)
    rough_night(cfg, raw)
    run("preprocess", "--config", cfg, "--src", raw, "--out", prep)
    run("tempgen", "--config", cfg, "--data", os.path.join(prep, "S00"), "--position", "V4", "--out", out)

    print("\nday  L1      hallucinating windows")
    with open(os.path.join(out, "report.csv")) as fh:
        for row in csv.DictReader(fh):
            print(f"{row['day']:>3}  {float(row['mean_l1']):.4f}  {100 * float(row['hallucination_pct']):5.1f}%")
    print(f"\ncharts: {out}/l1.svg, {out}/hallucination.svg")


if __name__ == "__main__":
    main()
