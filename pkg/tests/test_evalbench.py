import itertools
from functools import lru_cache
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vib2ecg import cardiosynth as cs
from vib2ecg import datastore as ds
from vib2ecg import model as vm
from vib2ecg import sigproc as sp
from vib2ecg.evalbench import detect, hallucination as hl, protocol as pr, report


def brute_force_matching(pred, ref, tol):
    """Size of a maximum one-to-one matching with |p - r| <= tol, by exhaustive search."""
    pred, ref = tuple(pred), tuple(ref)

    @lru_cache(maxsize=None)
    def best(i, used):
        if i == len(pred):
            return 0
        out = best(i + 1, used)
        for j, r in enumerate(ref):
            if not used >> j & 1 and abs(pred[i] - r) <= tol:
                out = max(out, 1 + best(i + 1, used | 1 << j))
        return out

    return best(0, 0)


def recall_precision(pred, ref, tol):
    pred, ref = np.asarray(pred), np.asarray(ref)
    found = sum(np.any(np.abs(pred - r) <= tol) for r in ref) if len(pred) else 0
    hit = sum(np.any(np.abs(ref - p) <= tol) for p in pred) if len(ref) else 0
    return found / len(ref), hit / max(len(pred), 1)


@pytest.fixture(scope="module")
def clean60():
    p = cs.SubjectProfile(heart_rate_mean=60, rng_seed=21)
    rec, anns = cs.gen_paired_recording(p, duration=60, positions=("V2", "V4", "V6"))
    return rec, anns


# -- L1 ------------------------------------------------------------------------------


def test_l1_distance(rng):
    x = rng.standard_normal(500)
    assert pr.l1_distance(x, x) == 0
    assert pr.l1_distance(x + 0.25, x) == pytest.approx(0.25, abs=1e-12)
    y = rng.standard_normal(500)
    total = 0.0
    for a, b in zip(x, y):
        total += abs(a - b)
    assert abs(pr.l1_distance(x, y) - total / len(x)) < 1e-9
    with pytest.raises(ValueError):
        pr.l1_distance(x, y[:10])


# -- QRS ------------------------------------------------------------------------------


@pytest.mark.parametrize("position", ["V2", "V4", "V6"])
def test_qrs_on_clean_ecg(clean60, position):
    rec, anns = clean60
    pc = ds.prepare_channel(rec.channel(position))
    ref = anns[position].to_indices(pc.start_tick)["r_peaks"]
    beats = detect.detect_qrs(sp.UniformSignal(pc.ecg, 1000))
    se, ppv = recall_precision(beats.r_peaks, ref, 50)
    assert se >= 0.99 and ppv >= 0.99
    assert np.all(np.diff(beats.r_peaks) >= 200)
    assert np.all((beats.confidence >= 0) & (beats.confidence <= 1))


def test_qrs_with_powerline_at_10db(clean60):
    rec, anns = clean60
    pc = ds.prepare_channel(rec.channel("V4"))
    x = pc.ecg.astype(np.float64)
    noise, _ = cs.noise_component("powerline", len(x), 1000.0, 1.0, np.random.default_rng(0))
    noise *= np.sqrt(np.mean(x**2) / 10 / np.mean(noise**2))
    beats = detect.detect_qrs(sp.UniformSignal(x + noise, 1000))
    se, _ = recall_precision(beats.r_peaks, anns["V4"].to_indices(pc.start_tick)["r_peaks"], 50)
    assert se >= 0.95


def test_qrs_flat_and_short():
    assert len(detect.detect_qrs(sp.UniformSignal(np.zeros(5000), 1000))) == 0
    with pytest.raises(sp.SignalTooShort):
        detect.detect_qrs(sp.UniformSignal(np.zeros(1999), 1000))
    with pytest.raises(ValueError):
        detect.detect_qrs(sp.UniformSignal(np.zeros(5000), 500))


def test_qrs_min_peak_floor(clean60):
    rec, _ = clean60
    x = ds.prepare_channel(rec.channel("V4")).ecg[:10_000]
    all_beats = detect.detect_qrs(sp.UniformSignal(x, 1000))
    assert len(detect.detect_qrs(sp.UniformSignal(x, 1000), min_peak=1e6)) == 0
    assert len(detect.detect_qrs(sp.UniformSignal(x, 1000), min_peak=0.0)) == len(all_beats)


# -- heart sounds --------------------------------------------------------------------


def _hs_rates(hr, jitter, s2_mean, seed=0):
    p = cs.SubjectProfile(heart_rate_mean=hr, s2_over_s1_jitter=jitter, s2_amplitude_mean=s2_mean, rng_seed=seed)
    rec, anns = cs.gen_paired_recording(p, duration=60, positions=("V3",))
    pc = ds.prepare_channel(rec.channel("V3"))
    idx = anns["V3"].to_indices(pc.start_tick)
    marks = detect.detect_heart_sounds(sp.UniformSignal(pc.pcgl, 1000))
    assert np.all(np.diff(marks.s1) > 0) and np.all(np.diff(marks.s2) > 0)
    inner = lambda a: a[(a > 100) & (a < len(pc.pcgl) - 100)]  # noqa: E731
    return recall_precision(marks.s1, inner(idx["s1_onsets"]), 50)[0], recall_precision(marks.s2, inner(idx["s2_onsets"]), 50)[0]


@pytest.mark.parametrize("hr", [45, 60, 90])
def test_heart_sounds_clean(hr):
    s1, s2 = _hs_rates(hr, 0.08, 0.6)
    assert s1 >= 0.95 and s2 >= 0.95


def test_heart_sounds_equal_amplitude_uses_timing():
    s1, s2 = _hs_rates(60, 0.0, 1.0, seed=4)
    assert s1 >= 0.9 and s2 >= 0.9


def test_heart_sounds_silence_and_sparse():
    assert len(detect.detect_heart_sounds(sp.UniformSignal(np.zeros(3000), 1000)).s1) == 0
    x = np.zeros(3000)
    x[1000:1020] = np.sin(np.arange(20))
    marks = detect.detect_heart_sounds(sp.UniformSignal(x, 1000))
    assert len(marks.s1) == 0 and len(marks.s2) == 0


# -- matching and hallucinations -----------------------------------------------------


def test_greedy_matches_brute_force_exhaustive_small():
    ref = (100, 400, 700)
    candidates = (0, 180, 390, 560, 800)
    for k in range(len(candidates) + 1):
        for subset in itertools.combinations(candidates, k):
            assert len(hl.greedy_match(np.array(subset), np.array(ref), 150)) == brute_force_matching(subset, ref, 150)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(0, 3000), max_size=8), st.lists(st.integers(0, 3000), max_size=8), st.integers(0, 400))
def test_greedy_matches_brute_force(pred, ref, tol):
    pairs = hl.greedy_match(np.array(pred, dtype=np.int64), np.array(ref, dtype=np.int64), tol)
    assert len(pairs) == brute_force_matching(pred, ref, tol)
    assert all(abs(pred[i] - ref[j]) <= tol for i, j in pairs)
    assert len({i for i, _ in pairs}) == len(pairs) == len({j for _, j in pairs})


def _ref(systole, s2=(), length=3000):
    systole = np.array(systole, dtype=np.int64)
    return hl.BeatReference(systole, systole + 30, np.array(s2, dtype=np.int64), length)


def test_verdict_basics():
    ref = _ref([200, 1200, 2200], s2=[570, 1570, 2570])
    v = hl.count_hallucinations(np.array([200, 1200, 2200]), ref)
    assert (v.hallucinations, v.misses, v.matched) == (0, 0, 3) and not v.any_hallucination
    v = hl.count_hallucinations(np.array([200, 800, 1200, 2200]), ref)
    assert v.hallucinations == 1 and v.misses == 0
    v = hl.count_hallucinations(np.array([200, 2200]), ref)
    assert v.hallucinations == 0 and v.misses == 1


def test_prediction_on_s2_is_flagged():
    ref = _ref([200, 1200, 2200], s2=[570, 1570, 2570])
    v = hl.count_hallucinations(np.array([200, 590, 1200, 2200]), ref)
    assert v.hallucinations == 1 and v.flagged_s2 == 1


def test_references_outside_window_only_match():
    ref = _ref([-80, 900, 3050], length=3000)
    v = hl.count_hallucinations(np.array([10, 900, 2990]), ref)
    assert v.hallucinations == 0 and v.misses == 0
    v = hl.count_hallucinations(np.array([900]), ref)
    assert v.misses == 0


def test_reference_from_heart_sound_marks():
    marks = detect.HeartSoundMarks(np.array([230, 1230]), np.array([600, 1600]))
    v = hl.count_hallucinations(np.array([200, 1200, 1590]), marks)
    assert v.hallucinations == 1 and v.misses == 0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 3000), max_size=10, unique=True), st.randoms(use_true_random=False))
def test_verdict_is_permutation_invariant(pred, rnd):
    ref = _ref([150, 1000, 1850, 2700], s2=[500, 1350, 2200])
    shuffled = list(pred)
    rnd.shuffle(shuffled)
    a = hl.count_hallucinations(np.array(pred, dtype=np.int64), ref)
    b = hl.count_hallucinations(np.array(shuffled, dtype=np.int64), ref)
    assert a == b
    assert a.hallucinations >= 0 and a.misses >= 0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.booleans(), min_size=4, max_size=4))
def test_omitting_beats_never_hallucinates(keep):
    systole = np.array([150, 1000, 1850, 2700])
    ref = _ref(systole, s2=[500, 1350, 2200])
    v = hl.count_hallucinations(systole[np.array(keep)], ref)
    assert v.hallucinations == 0 and v.misses == 4 - sum(keep)


# -- evaluate -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def test_split():
    rec, anns = cs.gen_paired_recording(cs.SubjectProfile(rng_seed=8), duration=60, positions=("V4",))
    segs = ds.segment_recording(rec, "V4")
    return segs, anns["V4"]


class _Oracle:
    """Stand-in model; predictions are passed to evaluate directly."""

    cfg = vm.UNetConfig(in_channels=1)


def test_sample_windows():
    np.testing.assert_array_equal(pr.sample_windows(100), np.arange(100))
    a = pr.sample_windows(1000, 310, seed=3)
    assert len(a) == 310 and len(set(a)) == 310 and np.all(np.diff(a) > 0)
    np.testing.assert_array_equal(a, pr.sample_windows(1000, 310, seed=3))
    assert not np.array_equal(a, pr.sample_windows(1000, 310, seed=4))


def test_perfect_predictor(test_split):
    segs, ann = test_split
    scale = ds.ecg_scale_of(segs)
    preds = np.stack([s.ecg / scale for s in segs])
    (row,) = pr.evaluate(_Oracle(), segs, "SCG", scale, annotations=ann, predictions=preds).rows
    assert row.mean_l1 == 0 and row.hallucination_pct == 0
    assert row.n_windows == row.n_sampled == len(segs) and row.reference_beats > 0
    # a beat cut by the window edge can go undetected; nothing else may
    edge = 0
    for s in segs:
        sys_ = hl.BeatReference.from_annotations(ann, s.start_tick, 3000).systole
        edge += int(np.sum(((sys_ >= 0) & (sys_ < 50)) | ((sys_ >= 2950) & (sys_ < 3000))))
    assert row.missed_beats <= edge


def test_zero_predictor_only_misses(test_split):
    segs, ann = test_split
    preds = np.zeros((len(segs), 3000), np.float32)
    (row,) = pr.evaluate(_Oracle(), segs, "SCG", 1.0, annotations=ann, predictions=preds, min_peak=0.1).rows
    assert row.hallucination_pct == 0 and row.missed_beats == row.reference_beats > 0


def test_extra_beat_is_detected(test_split):
    segs, ann = test_split
    scale = ds.ecg_scale_of(segs)
    preds = np.stack([s.ecg / scale for s in segs])
    ref = hl.BeatReference.from_annotations(ann, segs[2].start_tick, 3000)
    r = int(ref.systole[(ref.systole > 300) & (ref.systole < 2000)][0])
    beat = preds[2][r - 60 : r + 60].copy()
    mid = r + 600  # mid-diastole
    preds[2][mid - 60 : mid + 60] += beat
    rep = pr.evaluate(_Oracle(), segs, "SCG", scale, annotations=ann, predictions=preds)
    (row,) = rep.rows
    assert row.hallucinated_windows == 1 and row.hallucination_pct == pytest.approx(1 / len(segs))


def test_evaluate_without_annotations_uses_heart_sounds(test_split):
    segs, _ = test_split
    scale = ds.ecg_scale_of(segs)
    preds = np.stack([s.ecg / scale for s in segs])
    (row,) = pr.evaluate(_Oracle(), segs, "SCG", scale, predictions=preds).rows
    assert row.hallucination_pct <= 0.1 and row.reference_beats > 0


def test_evaluate_sampling_and_grouping(test_split):
    segs, ann = test_split
    preds = np.zeros((len(segs), 3000), np.float32)
    rep = pr.evaluate(_Oracle(), segs, "SCG", annotations=ann, predictions=preds, sample_size=5, seed=1)
    assert rep.rows[0].n_sampled == 5 and rep.rows[0].n_windows == len(segs)
    with pytest.raises(ValueError):
        pr.evaluate(_Oracle(), [], "SCG")


def test_report_csv_round_trip(tmp_path):
    rows = [pr.EvalRow("s0", "V4", m, d, 0.1 + d, 0.25, 10, 10, 2, 3, 1, 30, 7) for m in ("SCG", "BOTH") for d in (0, 1)]
    rep = pr.EvalReport(rows)
    rep.to_csv(tmp_path / "r.csv")
    back = pr.EvalReport.from_csv(tmp_path / "r.csv")
    assert back.rows == rows
    assert len(rep.where(input_mode="BOTH")) == 2
    s = pr.summarize(rep, "day")
    assert s[1]["mean_l1"] == pytest.approx(1.1)


# -- ablation and temporal protocols ---------------------------------------------------


TINY = vm.UNetConfig(channel_ladder=(4, 8, 16))


@pytest.fixture(scope="module")
def small_dataset():
    rec, anns = cs.gen_paired_recording(cs.SubjectProfile(rng_seed=2), duration=45, positions=("V4",))
    return ds.split_channel(ds.prepare_channel(rec.channel("V4")), rec.subject_id, 0, 3000), anns["V4"]


def test_single_mode_ablation_is_reproducible(small_dataset):
    data, ann = small_dataset
    tcfg = vm.TrainConfig(max_epochs=1, patience=1, batch_size=4)
    a = pr.run_ablation(data, ("PCGL",), tcfg, ann, ucfg=TINY)
    b = pr.run_ablation(data, ("PCGL",), tcfg, ann, ucfg=TINY)
    assert len(a.report) == 1 and a.report.rows[0].input_mode == "PCGL"
    assert a.report.rows == b.report.rows
    assert a.models["PCGL"].cfg.in_channels == 1


def test_temporal_protocol_rows(small_dataset):
    data, ann = small_dataset
    p = cs.SubjectProfile(rng_seed=2)
    later = {}
    anns = {(data.test[0].subject_id, 0): ann}
    for day in (1, 2):
        rec, a = cs.gen_paired_recording(p, day=day, duration=30, positions=("V4",), subject_id=data.test[0].subject_id)
        later[day] = ds.segment_recording(rec, "V4")
        anns[(rec.subject_id, day)] = a["V4"]
    tcfg = vm.TrainConfig(max_epochs=1, patience=1, batch_size=4, input_mode="BOTH")
    res = pr.temporal_from_datasets(data, later, tcfg, anns, ucfg=TINY)
    assert [r.day for r in res.report] == [0, 1, 2]
    assert res.report.rows[1].n_windows == 10
    # day 0 equals the standard protocol on the same model
    std = pr.evaluate(res.models["day0"], data.test, "BOTH", data.ecg_scale, annotations=anns,
                      min_peak=pr.MIN_PEAK_FRACTION * pr.typical_r_amplitude(data.train, data.ecg_scale))
    assert std.rows[0] == res.report.rows[0]
    with pytest.raises(ValueError):
        pr.temporal_from_datasets(data, {}, tcfg)


# -- charts ---------------------------------------------------------------------------------


def test_charts_are_strict_xml(tmp_path):
    summary = {"SCG": {"mean_l1": 0.2, "hallucination_pct": 0.05}, "BOTH": {"mean_l1": 0.1, "hallucination_pct": 0.0}}
    for svg in report.ablation_charts(summary) + report.temporal_charts({0: summary["SCG"], 3: summary["BOTH"]}):
        report.write_svg(tmp_path / "c.svg", svg)
        root = ET.parse(tmp_path / "c.svg").getroot()
        assert root.tag.endswith("svg")
