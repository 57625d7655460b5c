import json
import os
import struct
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vib2ecg import datastore as ds
from vib2ecg.sigproc import TimestampedSignal, UniformSignal, zscore


def _prepared(n, rng=None):
    rng = rng or np.random.default_rng(0)
    cols = {k: rng.standard_normal(n).astype(np.float32) for k in ("ecg", "raw", "scg", "pcgl")}
    return ds.PreparedChannel(start_tick=0, position="V4", **cols)


# -- binary format -------------------------------------------------------------


def test_header_layout_matches_documented_bytes():
    sig = UniformSignal(np.array([1.0, -2.0], dtype=np.float32), 1000.0, 7)
    buf = ds.encode_uniform(sig)
    assert buf[:4] == b"VIB2"
    assert struct.unpack_from("<HBBQ", buf, 4) == (1, 0, 1, 2)
    assert struct.unpack_from("<dQ", buf, 16) == (1000.0, 7)
    assert np.frombuffer(buf[32:], "<f4").tolist() == [1.0, -2.0]
    ts = TimestampedSignal(np.array([0.5, 0.25], dtype=np.float32), np.array([10, 100_010], dtype=np.uint64), 500.0)
    tbuf = ds.encode_timestamped(ts)
    assert struct.unpack_from("<HBBQ", tbuf, 4) == (1, 1, 1, 2)
    assert struct.unpack_from("<Qf", tbuf, 16) == (10, 0.5)
    assert struct.unpack_from("<Qf", tbuf, 28) == (100_010, 0.25)


def test_recording_round_trip_bit_exact(short_recording, tmp_path):
    rec, _ = short_recording
    ds.write_recording(rec, tmp_path / "r")
    back = ds.read_recording(tmp_path / "r")
    assert back.equals(rec)
    manifest = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert manifest["positions"] == list(ds.POSITIONS)
    assert manifest["format_version"] == ds.FORMAT_VERSION


def test_multi_axis_round_trip(tmp_path, short_recording):
    rec, _ = short_recording
    ch = rec.channels[0]
    xyz = np.stack([ch.vib.samples, 2 * ch.vib.samples, -ch.vib.samples], axis=1).astype(np.float32)
    tri = replace(ch, vib=TimestampedSignal(xyz, ch.vib.timestamps, ch.vib.nominal_rate), axis_labels=("x", "y", "z"))
    rec3 = replace(rec, channels=(tri,) + rec.channels[1:])
    ds.write_recording(rec3, tmp_path / "r3")
    back = ds.read_recording(tmp_path / "r3")
    assert back.equals(rec3)
    np.testing.assert_array_equal(back.channels[0].vib_axis().samples, -ch.vib.samples)


def test_write_is_deterministic(short_recording, tmp_path):
    rec, _ = short_recording
    for d in ("a", "b"):
        ds.write_recording(rec, tmp_path / d)
    for name in os.listdir(tmp_path / "a"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_five_channels_refused(short_recording, tmp_path):
    rec, _ = short_recording
    five = replace(rec, channels=rec.channels[:5])
    with pytest.raises(ds.RecordingInvariantError):
        ds.write_recording(five, tmp_path / "x")
    assert not (tmp_path / "x").exists()


def test_tampered_magic_is_format_error(short_recording, tmp_path):
    rec, _ = short_recording
    ds.write_recording(rec, tmp_path / "r")
    path = tmp_path / "r" / "V3_ecg.bin"
    data = bytearray(path.read_bytes())
    data[0:4] = b"VIB3"
    path.write_bytes(bytes(data))
    with pytest.raises(ds.FormatError, match="V3_ecg.bin"):
        ds.read_recording(tmp_path / "r")


def test_missing_manifest_is_format_error(tmp_path):
    with pytest.raises(ds.FormatError, match="manifest"):
        ds.read_recording(tmp_path)


_UNI = ds.encode_uniform(UniformSignal(np.linspace(-1, 1, 64, dtype=np.float32), 1000.0, 5))
_TS = ds.encode_timestamped(TimestampedSignal(np.ones(64, np.float32), np.arange(64, dtype=np.uint64) * 100_000, 500.0))


@settings(max_examples=200, deadline=None)
@given(st.sampled_from([_UNI, _TS]), st.integers(0, 15), st.integers(1, 255))
def test_fuzzed_header_rejected(buf, pos, flip):
    bad = bytearray(buf)
    bad[pos] ^= flip
    with pytest.raises(ds.FormatError):
        ds.decode_stream(bytes(bad), 500.0)


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=80))
def test_arbitrary_bytes_never_crash(blob):
    try:
        ds.decode_stream(blob, 500.0)
    except ds.FormatError:
        pass


@settings(max_examples=50, deadline=None)
@given(st.sampled_from([_UNI, _TS]), st.integers(1, 40))
def test_truncated_stream_rejected(buf, cut):
    with pytest.raises(ds.FormatError):
        ds.decode_stream(buf[:-cut], 500.0)


# -- windowing ---------------------------------------------------------------------


def test_thirty_second_recording_gives_ten_segments(short_recording):
    rec, _ = short_recording
    segs = ds.segment_recording(rec, "V2")
    assert len(segs) == 10
    assert [s.segment_index for s in segs] == list(range(10))
    assert all(s.position == "V2" and s.day_index == rec.day_index for s in segs)
    assert segs[1].start_tick - segs[0].start_tick == 3000 * 50_000


@pytest.mark.parametrize("n,expected", [(30_000, 10), (31_000, 10), (2_999, 0), (3_000, 1)])
def test_segment_counts(n, expected):
    assert len(ds.segment_prepared(_prepared(n))) == expected


def test_segment_counts_with_stride():
    assert len(ds.segment_prepared(_prepared(30_000), stride=1500)) == 19
    with pytest.raises(ValueError):
        ds.window_starts(10_000, 0)


def test_segmentation_coverage():
    p = _prepared(31_000)
    segs = ds.segment_prepared(p)
    np.testing.assert_array_equal(np.concatenate([s.ecg for s in segs]), p.ecg[:30_000])
    for k, s in enumerate(segs):
        sl = slice(3000 * k, 3000 * (k + 1))
        np.testing.assert_array_equal(s.scg, zscore(p.scg[sl]).astype(np.float32))
        np.testing.assert_array_equal(s.raw, zscore(p.raw[sl]).astype(np.float32))


def test_segment_inputs_are_normalized_separately(short_recording):
    rec, _ = short_recording
    s = ds.segment_recording(rec, "V4")[3]
    for name in ("scg", "pcgl", "raw"):
        x = getattr(s, name).astype(np.float64)
        assert abs(x.mean()) < 1e-5 and abs(x.std() - 1) < 1e-5


def test_segment_rejects_bad_shape():
    with pytest.raises(ValueError):
        ds.Segment(np.zeros(10), np.zeros(3000), np.zeros(3000), np.zeros(3000), "V1", 0)
    bad = np.zeros(3000)
    bad[5] = np.nan
    with pytest.raises(ValueError):
        ds.Segment(bad, np.zeros(3000), np.zeros(3000), np.zeros(3000), "V1", 0)


# -- split ---------------------------------------------------------------------------


@pytest.mark.parametrize("n,sizes", [(10, (7, 1, 2)), (100, (70, 10, 20)), (1000, (700, 100, 200)), (15, (10, 1, 4))])
def test_temporal_split_sizes(n, sizes):
    split = ds.temporal_split(list(range(n)))
    assert (len(split.train), len(split.validation), len(split.test)) == sizes


def test_split_too_small():
    with pytest.raises(ds.SplitTooSmall):
        ds.temporal_split(list(range(9)))


@settings(max_examples=100, deadline=None)
@given(st.integers(10, 5000))
def test_split_no_leakage_and_cover(n):
    split = ds.temporal_split(list(range(n)))
    assert max(split.train) < min(split.validation) < min(split.test)
    assert sorted(split.train + split.validation + split.test) == list(range(n))
    assert len(split.train) == int(np.floor(0.7 * n)) and len(split.validation) == int(np.floor(0.1 * n))
    assert split == ds.temporal_split(list(range(n)))


def test_split_channel_training_windows_stay_before_validation():
    p = _prepared(60_000)
    data = ds.split_channel(p, train_stride=1500)
    train_end = max(s.start_tick for s in data.train) + 3000 * 50_000
    assert train_end <= min(s.start_tick for s in data.validation)
    assert len(data.train) == 27 and len(data.validation) == 2 and len(data.test) == 4
    assert data.ecg_scale > 0


def test_segment_and_split_files_round_trip(tmp_path):
    data = ds.split_channel(_prepared(60_000), subject_id="s7", day_index=2)
    ds.save_split(data, tmp_path / "d")
    back = ds.load_split(tmp_path / "d")
    assert back.ecg_scale == data.ecg_scale
    for name in ("train", "validation", "test"):
        a, b = getattr(data, name), getattr(back, name)
        assert len(a) == len(b)
        for x, y in zip(a, b):
            assert (x.subject_id, x.day_index, x.segment_index, x.start_tick) == (y.subject_id, y.day_index, y.segment_index, y.start_tick)
            for k in ds.SEGMENT_ARRAYS:
                assert getattr(x, k).tobytes() == getattr(y, k).tobytes()


def test_load_segments_detects_mismatch(tmp_path):
    segs = ds.segment_prepared(_prepared(9_000))
    ds.save_segments(segs, tmp_path / "s")
    np.save(tmp_path / "s" / "ecg.npy", np.zeros((2, 3000), np.float32))
    with pytest.raises(ds.FormatError, match="ecg.npy"):
        ds.load_segments(tmp_path / "s")
    with pytest.raises(ds.FormatError):
        ds.load_split(tmp_path / "nothing")
