"""Command-line entry point: ``vib2ecg <command> ...``.

Commands::

    synth       generate subjects x days of paired recordings
    ingest      validate recording directories and copy them into a store
    preprocess  filter, decompose, align, window and split recordings
    train       train one model on a prepared position dataset
    eval        score a checkpoint on a prepared dataset
    ablate      train and score one model per input mode
    tempgen     train on day 0 and score every later day
    report      redraw SVG charts from report CSV files

Report CSV columns (one row per subject/position/mode/day)::

    subject_id, position, input_mode, day, mean_l1, hallucination_pct,
    n_windows, n_sampled, hallucinated_windows, hallucinated_beats,
    missed_beats, reference_beats, seed

History CSV columns: epoch, train_l1, val_l1.

Failures print one JSON line ``{"error": <kind>, "message": <text>}`` on
stderr and exit with status 2 (usage) or 1 (anything else).
"""

import argparse
import glob
import json
import logging
import os
import shutil
import sys

from threadpoolctl import threadpool_limits

from . import cardiosynth, config as cfgmod, datastore, evalbench, model as vm
from .neuralcore import CheckpointFormatError

logger = logging.getLogger("vib2ecg")

CHECKPOINT = "model.v2ew"
TRAIN_INFO = "train.json"
ANNOTATIONS = "annotations.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- helpers ------------------------------------------------------------------


def _require_dir(path, what):
    if path is None or not os.path.isdir(path):
        raise UsageError(f"{what} directory not found: {path}")
    return path


def _recording_dirs(root):
    found = sorted(os.path.dirname(p) for p in glob.glob(os.path.join(root, "**", "manifest.json"), recursive=True))
    if not found:
        raise UsageError(f"no recording directories (manifest.json) under {root}")
    return found


def _load_annotations(path):
    with open(path) as fh:
        data = json.load(fh)
    return {(data["subject_id"], int(data["day_index"])): cardiosynth.BeatAnnotations.from_json(data["annotations"])}


def _dataset_annotations(*dirs):
    """Generator annotations stored next to prepared datasets, if any."""
    out = {}
    for d in dirs:
        p = os.path.join(d, ANNOTATIONS)
        if os.path.exists(p):
            out.update(_load_annotations(p))
    return out or None


def _write_report(report, out, kind):
    os.makedirs(out, exist_ok=True)
    report.to_csv(os.path.join(out, "report.csv"))
    if kind == "day":
        l1, hall = evalbench.temporal_charts(evalbench.summarize(report, "day"))
    else:
        hall, l1 = evalbench.ablation_charts(evalbench.summarize(report, "input_mode"))
    evalbench.write_svg(os.path.join(out, "l1.svg"), l1)
    evalbench.write_svg(os.path.join(out, "hallucination.svg"), hall)


def _train_cfg(args, cfg, mode=None):
    return cfg.train_config(
        input_mode=mode or getattr(args, "mode", None),
        max_epochs=getattr(args, "epochs", None),
        batch_size=getattr(args, "batch_size", None),
        lr=getattr(args, "lr", None),
    )


# -- commands -----------------------------------------------------------------


def cmd_synth(args, cfg):
    syn = cfg.synth
    subjects = args.subjects if args.subjects is not None else syn.subjects
    days = args.days if args.days is not None else syn.days
    duration = args.duration if args.duration is not None else syn.duration
    if subjects < 1 or days < 1:
        raise UsageError("subjects and days must be at least 1")
    if duration < 30:
        raise UsageError(f"duration must be at least 30 s, got {duration}")
    drift = cfg.drift()
    written = []
    for k in range(subjects):
        profile = cfg.profile(k)
        sid = f"S{k:02d}"
        for day in range(days):
            rec, anns = cardiosynth.gen_paired_recording(profile, drift, day, duration, subject_id=sid)
            path = os.path.join(args.out, sid, f"day{day}")
            datastore.write_recording(rec, path)
            with open(os.path.join(path, ANNOTATIONS), "w") as fh:
                json.dump({"subject_id": sid, "day_index": day, "annotations": anns[datastore.POSITIONS[0]].to_json()}, fh)
            written.append(path)
    cfg.synth.subjects, cfg.synth.days, cfg.synth.duration = subjects, days, duration
    cfgmod.write_effective(cfg, args.out, {"command": "synth"})
    return written


def cmd_ingest(args, cfg):
    written = []
    for src in _recording_dirs(_require_dir(args.src, "source")):
        rec = datastore.read_recording(src)
        dst = os.path.join(args.out, rec.subject_id, f"day{rec.day_index}")
        datastore.write_recording(rec, dst)
        if os.path.exists(os.path.join(src, ANNOTATIONS)):
            shutil.copyfile(os.path.join(src, ANNOTATIONS), os.path.join(dst, ANNOTATIONS))
        written.append(dst)
    cfgmod.write_effective(cfg, args.out, {"command": "ingest", "src": args.src})
    return written


def cmd_preprocess(args, cfg):
    pre = cfg.preprocess
    if args.train_stride is not None:
        pre.train_stride = args.train_stride
    if args.positions:
        pre.positions = args.positions.split(",")
    written = []
    for src in _recording_dirs(_require_dir(args.src, "input")):
        rec = datastore.read_recording(src)
        for pos in pre.positions:
            if pos not in datastore.POSITIONS:
                raise UsageError(f"unknown position {pos!r}")
            prepared = datastore.prepare_channel(rec.channel(pos), pre.axis or None)
            dst = os.path.join(args.out, rec.subject_id, f"day{rec.day_index}", pos)
            all_segs = datastore.segment_prepared(prepared, datastore.SEGMENT_LEN, rec.subject_id, rec.day_index)
            if len(all_segs) >= 10:
                split = datastore.split_channel(prepared, rec.subject_id, rec.day_index, pre.train_stride)
                datastore.save_split(split, dst, all_segs)
            else:
                logger.warning("%s %s: %d windows, too few to split; only all/ written", src, pos, len(all_segs))
                datastore.save_segments(all_segs, os.path.join(dst, "all"))
            if os.path.exists(os.path.join(src, ANNOTATIONS)):
                shutil.copyfile(os.path.join(src, ANNOTATIONS), os.path.join(dst, ANNOTATIONS))
            written.append(dst)
    cfgmod.write_effective(cfg, args.out, {"command": "preprocess", "src": args.src})
    return written


def cmd_train(args, cfg):
    data = _require_dir(args.data, "dataset")
    if args.pooled:
        parts = sorted(d for d in glob.glob(os.path.join(data, "*")) if os.path.exists(os.path.join(d, "split.json")))
        if not parts:
            raise UsageError(f"no prepared position datasets under {data}")
        dataset = datastore.pool_splits(datastore.load_split(d) for d in parts)
    else:
        dataset = datastore.load_split(data)
    tcfg = _train_cfg(args, cfg)
    ucfg = cfg.unet_config(tcfg.in_channels)
    digest = vm.config_hash(ucfg, tcfg)
    if args.resume:
        info_path = os.path.join(args.resume, TRAIN_INFO)
        if not os.path.exists(info_path):
            raise UsageError(f"nothing to resume in {args.resume}")
        with open(info_path) as fh:
            previous = json.load(fh)
        if previous.get("config_hash") != digest:
            raise UsageError(f"config hash {digest} does not match checkpoint ({previous.get('config_hash')}); refusing to resume")
        net = vm.UNet.load(os.path.join(args.resume, CHECKPOINT), ucfg.input_length)
    else:
        net = vm.build_model(ucfg, seed=tcfg.seed)
    best, hist = vm.train(net, dataset.train, dataset.validation, tcfg, dataset.ecg_scale)
    os.makedirs(args.out, exist_ok=True)
    best.save(os.path.join(args.out, CHECKPOINT))
    hist.to_csv(os.path.join(args.out, "history.csv"))
    info = {
        "config_hash": digest,
        "input_mode": tcfg.input_mode,
        "ecg_scale": dataset.ecg_scale,
        "best_epoch": hist.best_epoch,
        "best_val_l1": min(hist.val_l1),
        "seed": tcfg.seed,
        "n_parameters": best.n_parameters,
        "pooled": bool(args.pooled),
    }
    with open(os.path.join(args.out, TRAIN_INFO), "w") as fh:
        json.dump(info, fh, indent=1)
    cfgmod.write_effective(cfg, args.out, {"command": "train", "data": data, "mode": tcfg.input_mode})
    return [args.out]


def cmd_eval(args, cfg):
    if not args.checkpoint:
        raise UsageError("eval needs --checkpoint")
    ckpt_dir = _require_dir(args.checkpoint, "checkpoint")
    data = _require_dir(args.data, "dataset")
    try:
        with open(os.path.join(ckpt_dir, TRAIN_INFO)) as fh:
            info = json.load(fh)
    except OSError as exc:
        raise UsageError(f"{ckpt_dir} has no {TRAIN_INFO}") from exc
    net = vm.UNet.load(os.path.join(ckpt_dir, CHECKPOINT))
    segs = datastore.load_segments(os.path.join(data, args.split))
    if not segs:
        raise UsageError(f"no segments in {data}/{args.split}")
    train = datastore.load_segments(os.path.join(data, "train")) if os.path.isdir(os.path.join(data, "train")) else segs
    scale = info["ecg_scale"]
    min_peak = evalbench.protocol.MIN_PEAK_FRACTION * evalbench.typical_r_amplitude(train, scale)
    sample = args.sample_size or cfg.eval.sample_size
    report = evalbench.evaluate(net, segs, info["input_mode"], scale, sample, cfg.seed, _dataset_annotations(data), min_peak)
    _write_report(report, args.out, "input_mode")
    cfgmod.write_effective(cfg, args.out, {"command": "eval", "checkpoint": ckpt_dir, "data": data})
    return [args.out]


def cmd_ablate(args, cfg):
    data = _require_dir(args.data, "dataset")
    dataset = datastore.load_split(data)
    modes = args.modes.split(",") if args.modes else cfg.eval.modes
    for m in modes:
        if m not in vm.INPUT_MODES:
            raise UsageError(f"unknown input mode {m!r}")
    tcfg = _train_cfg(args, cfg, mode=modes[0])
    ucfg = cfg.unet_config(1)
    sample = args.sample_size or cfg.eval.sample_size
    res = evalbench.run_ablation(dataset, modes, tcfg, _dataset_annotations(data), sample, cfg.seed, ucfg)
    for m, net in res.models.items():
        sub = os.path.join(args.out, m)
        os.makedirs(sub, exist_ok=True)
        net.save(os.path.join(sub, CHECKPOINT))
        res.histories[m].to_csv(os.path.join(sub, "history.csv"))
    _write_report(res.report, args.out, "input_mode")
    cfgmod.write_effective(cfg, args.out, {"command": "ablate", "data": data, "modes": ",".join(modes)})
    return [args.out]


def cmd_tempgen(args, cfg):
    root = _require_dir(args.data, "subject")
    position = args.position or cfg.eval.position
    days = {}
    for d in glob.glob(os.path.join(root, "day*", position)):
        days[int(os.path.basename(os.path.dirname(d))[3:])] = d
    if len(days) < 2:
        raise UsageError(f"need prepared data for at least two days of {position} under {root}")
    first = min(days)
    day0 = datastore.load_split(days[first])
    later = {d: datastore.load_segments(os.path.join(p, "all")) for d, p in sorted(days.items()) if d != first}
    tcfg = _train_cfg(args, cfg)
    ucfg = cfg.unet_config(tcfg.in_channels)
    sample = args.sample_size or cfg.eval.sample_size
    anns = _dataset_annotations(*days.values())
    res = evalbench.temporal_from_datasets(day0, later, tcfg, anns, sample, cfg.seed, ucfg)
    os.makedirs(args.out, exist_ok=True)
    res.models["day0"].save(os.path.join(args.out, CHECKPOINT))
    res.histories["day0"].to_csv(os.path.join(args.out, "history.csv"))
    _write_report(res.report, args.out, "day")
    cfgmod.write_effective(cfg, args.out, {"command": "tempgen", "data": root, "position": position})
    return [args.out]


def cmd_report(args, cfg):
    report = evalbench.EvalReport()
    for path in args.csv:
        if not os.path.exists(path):
            raise UsageError(f"report not found: {path}")
        report.extend(evalbench.EvalReport.from_csv(path))
    if not report.rows:
        raise UsageError("reports contain no rows")
    kind = "day" if len({r.day for r in report}) > 1 else "input_mode"
    _write_report(report, args.out, kind)
    return [args.out]


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "tempgen": cmd_tempgen,
    "report": cmd_report,
}


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--seed", type=int, help=f"overrides the config file and ${cfgmod.SEED_ENV}")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="BLAS threads (default: logical cores)")
    common.add_argument("--deterministic", action="store_true", help="single-threaded, fixed reduction order")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="vib2ecg", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic recordings")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int)
    p.add_argument("--days", type=int)
    p.add_argument("--duration", type=float, help="seconds per recording (>= 30)")

    p = sub.add_parser("ingest", parents=[common], help="validate and copy recording directories")
    p.add_argument("--src", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("preprocess", parents=[common], help="window and split recordings")
    p.add_argument("--src", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--train-stride", type=int)
    p.add_argument("--positions", help="comma-separated, e.g. V1,V4")

    def training_flags(p):
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--sample-size", type=int, help="windows sampled for the hallucination audit")

    p = sub.add_parser("train", parents=[common], help="train on a prepared position dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=vm.INPUT_MODES)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="directory of a previous train run")
    p.add_argument("--pooled", action="store_true", help="--data holds one dataset per position; train one model on all of them")
    training_flags(p)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", help="directory written by train")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "validation", "test", "all"))
    p.add_argument("--out", required=True)
    p.add_argument("--sample-size", type=int)

    p = sub.add_parser("ablate", parents=[common], help="input-mode ablation")
    p.add_argument("--data", required=True)
    p.add_argument("--modes", help="comma-separated subset of " + ",".join(vm.INPUT_MODES))
    p.add_argument("--out", required=True)
    training_flags(p)

    p = sub.add_parser("tempgen", parents=[common], help="temporal generalization study")
    p.add_argument("--data", required=True, help="prepared subject directory holding day*/")
    p.add_argument("--position")
    p.add_argument("--mode", choices=vm.INPUT_MODES)
    p.add_argument("--out", required=True)
    training_flags(p)

    p = sub.add_parser("report", parents=[common], help="redraw charts from report CSVs")
    p.add_argument("csv", nargs="+")
    p.add_argument("--out", required=True)
    return parser


def _fail(kind, message, code):
    print(json.dumps({"error": kind, "message": " ".join(str(message).split())}), file=sys.stderr)
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s", stream=sys.stderr)
    threads = 1 if args.deterministic else max(1, args.threads)
    try:
        cfg = cfgmod.load(args.config, args.seed)
        with threadpool_limits(limits=threads):
            COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    except cfgmod.ConfigError as exc:
        return _fail("config", exc, 2)
    except (datastore.FormatError, CheckpointFormatError) as exc:
        return _fail("format", exc, 1)
    except OSError as exc:
        return _fail("io", f"{exc.filename}: {exc.strerror}" if exc.filename else exc, 1)
    except ValueError as exc:
        return _fail("invalid", exc, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
