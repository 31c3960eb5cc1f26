import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridcast.boids import SceneObject, WorldConfig, rasterize, simulate_objects
from gridcast.dataio import (
    SequenceRecord,
    TrackRow,
    build_sequence,
    export_frames,
    export_gray_frames,
    gray_byte,
    read_ogsq,
    read_param_blob,
    read_pgm,
    read_tracks_csv,
    tracks_to_sequence,
    write_ogsq,
    write_param_blob,
    write_pgm,
    write_tracks_csv,
)
from gridcast.errors import DataFormatError
from gridcast.noise import NoiseConfig

from conftest import make_record


# --- OGSQ1 -------------------------------------------------------------------


def test_empty_record_is_header_only(tmp_path):
    # magic(5) + version(2) + height(2) + width(2) + frame_count(4) + fps(2)
    path = tmp_path / "empty.ogsq"
    write_ogsq(SequenceRecord(height=50, width=50, frames=[], fps=30), path)
    assert path.stat().st_size == 17
    back = read_ogsq(path)
    assert (back.height, back.width, back.fps, back.frames) == (50, 50, 30, [])


def test_roundtrip_random_record(rng, tmp_path):
    record = make_record(rng, height=7, width=9, n_frames=5, fps=25)
    path = tmp_path / "r.ogsq"
    write_ogsq(record, path)
    back = read_ogsq(path)
    assert (back.height, back.width, back.fps) == (7, 9, 25)
    for (m1, t1), (m2, t2) in zip(record.frames, back.frames):
        assert np.array_equal(m1, m2) and np.array_equal(t1, t2)
    # byte-exact: writing the parsed record reproduces the file
    buf = io.BytesIO()
    write_ogsq(back, buf)
    assert buf.getvalue() == path.read_bytes()


def test_bad_payload_byte_reports_offset(rng, tmp_path):
    record = make_record(rng, height=4, width=4, n_frames=2)
    path = tmp_path / "bad.ogsq"
    write_ogsq(record, path)
    data = bytearray(path.read_bytes())
    data[17 + 5] = 2
    path.write_bytes(bytes(data))
    with pytest.raises(DataFormatError) as err:
        read_ogsq(path)
    assert err.value.offset == 17 + 5
    assert "2" in str(err.value)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.ogsq"
    path.write_bytes(b"NOPE!" + bytes(12))
    with pytest.raises(DataFormatError) as err:
        read_ogsq(path)
    assert err.value.offset == 0


def test_truncated_stream_rejected(rng, tmp_path):
    record = make_record(rng, height=4, width=4, n_frames=2)
    path = tmp_path / "t.ogsq"
    write_ogsq(record, path)
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    with pytest.raises(DataFormatError) as err:
        read_ogsq(path)
    assert err.value.offset == len(data) - 5


def test_trailing_data_rejected(rng, tmp_path):
    record = make_record(rng, height=4, width=4, n_frames=1)
    path = tmp_path / "t.ogsq"
    write_ogsq(record, path)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(DataFormatError):
        read_ogsq(path)


def test_write_rejects_non_binary_frame():
    bad = SequenceRecord(
        height=2,
        width=2,
        frames=[(np.full((2, 2), 3, dtype=np.uint8), np.zeros((2, 2), dtype=np.uint8))],
    )
    with pytest.raises(DataFormatError):
        write_ogsq(bad, io.BytesIO())


@settings(max_examples=120, deadline=None)
@given(
    height=st.integers(1, 12),
    width=st.integers(1, 12),
    n_frames=st.integers(0, 6),
    fps=st.integers(1, 120),
    seed=st.integers(0, 2**32 - 1),
)
def test_ogsq_roundtrip_property(height, width, n_frames, fps, seed):
    record = make_record(
        np.random.default_rng(seed), height=height, width=width, n_frames=n_frames, fps=fps
    )
    buf = io.BytesIO()
    write_ogsq(record, buf)
    buf.seek(0)
    back = read_ogsq(buf)
    again = io.BytesIO()
    write_ogsq(back, again)
    assert again.getvalue() == buf.getvalue()


# --- parameter blobs ----------------------------------------------------------


def test_param_blob_roundtrip(rng, tmp_path):
    shapes = [(3, 2), (4,), (2, 2, 2)]
    arrays = [rng.standard_normal(s) for s in shapes]
    path = tmp_path / "p.blob"
    write_param_blob(b"TEST1", arrays, path)
    back = read_param_blob(b"TEST1", shapes, path)
    for a, b in zip(arrays, back):
        assert np.array_equal(a, b)


def test_param_blob_magic_and_count_validation(rng, tmp_path):
    path = tmp_path / "p.blob"
    write_param_blob(b"TEST1", [rng.standard_normal((2, 2))], path)
    with pytest.raises(DataFormatError):
        read_param_blob(b"OTHER", [(2, 2)], path)
    with pytest.raises(DataFormatError):
        read_param_blob(b"TEST1", [(3, 3)], path)


# --- PGM ----------------------------------------------------------------------


def test_pgm_zero_frame(tmp_path):
    path = tmp_path / "z.pgm"
    write_pgm(path, np.zeros((3, 4), dtype=np.uint8))
    data = path.read_bytes()
    assert data.endswith(bytes(12))
    assert np.array_equal(read_pgm(path), np.zeros((3, 4), dtype=np.uint8))


def test_gray_byte_rounds_half_up():
    assert gray_byte(np.array([0.5]))[0] == 128
    assert gray_byte(np.array([0.0]))[0] == 0
    assert gray_byte(np.array([1.0]))[0] == 255


def test_export_binary_frames_parse_back(rng, tmp_path):
    record = make_record(rng, height=6, width=5, n_frames=3)
    paths = export_frames(record, tmp_path)
    assert len(paths) == 6
    m0 = read_pgm(tmp_path / "frame_00000_measurement.pgm")
    assert set(np.unique(m0)) <= {0, 255}
    assert np.array_equal((m0 == 255).astype(np.uint8), record.frames[0][0])
    t2 = read_pgm(tmp_path / "frame_00002_truth.pgm")
    assert np.array_equal((t2 == 255).astype(np.uint8), record.frames[2][1])


def test_export_gray_frames_uniform_half(tmp_path):
    export_gray_frames([np.full((4, 4), 0.5)], tmp_path, "prob")
    img = read_pgm(tmp_path / "frame_00000_prob.pgm")
    assert np.array_equal(img, np.full((4, 4), 128, dtype=np.uint8))


# --- tracks -------------------------------------------------------------------


def zero_noise():
    return NoiseConfig(miss_rate=0.0, shift_rate=0.0, seed=0)


def test_empty_rows_with_declared_frames():
    record = tracks_to_sequence([], 8, 8, zero_noise(), n_frames=10)
    assert len(record.frames) == 10
    for measurement, truth in record.frames:
        assert measurement.sum() == 0 and truth.sum() == 0


def test_static_object_zero_noise():
    rows = [TrackRow(frame_index=t, object_id=1, x=4.5, y=4.5, radius=2.0) for t in range(5)]
    record = tracks_to_sequence(rows, 9, 9, zero_noise())
    disk = rasterize([SceneObject(x=4.5, y=4.5, radius=2.0)], 9, 9)
    for measurement, truth in record.frames:
        assert np.array_equal(measurement, disk) and np.array_equal(truth, disk)


def test_boids_tracks_through_csv_match_direct_rasterization(tmp_path):
    cfg = WorldConfig(n_agents=5, seed=31)
    object_frames = simulate_objects(cfg, 12)
    rows = [
        TrackRow(frame_index=t, object_id=k, x=o.x, y=o.y, radius=o.radius)
        for t, objs in enumerate(object_frames)
        for k, o in enumerate(objs)
    ]
    path = tmp_path / "tracks.csv"
    write_tracks_csv(rows, path)
    record = tracks_to_sequence(read_tracks_csv(path), cfg.height, cfg.width, zero_noise())
    for t, (measurement, truth) in enumerate(record.frames):
        direct = rasterize(object_frames[t], cfg.height, cfg.width)
        assert np.array_equal(truth, direct)
        assert np.array_equal(measurement, direct)


def test_unsorted_rows_report_row_number():
    rows = [
        TrackRow(frame_index=3, object_id=0, x=1.0, y=1.0, radius=1.0),
        TrackRow(frame_index=1, object_id=0, x=1.0, y=1.0, radius=1.0),
    ]
    with pytest.raises(DataFormatError) as err:
        tracks_to_sequence(rows, 8, 8, zero_noise())
    assert err.value.offset == 2


def test_out_of_bounds_row_rejected():
    rows = [TrackRow(frame_index=0, object_id=0, x=9.5, y=1.0, radius=1.0)]
    with pytest.raises(DataFormatError) as err:
        tracks_to_sequence(rows, 8, 8, zero_noise())
    assert err.value.offset == 1


def test_csv_header_validation(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("frame,id,x,y,r\n0,0,1,1,1\n")
    with pytest.raises(DataFormatError):
        read_tracks_csv(path)


def test_tracks_sequence_matches_build_sequence(rng):
    # Corrupting grouped rows equals corrupting the same object sets directly.
    frames = [
        [SceneObject(x=10.0 + t, y=12.0, radius=2.0), SceneObject(x=30.0, y=20.0 + t, radius=2.0)]
        for t in range(6)
    ]
    rows = [
        TrackRow(frame_index=t, object_id=k, x=o.x, y=o.y, radius=o.radius)
        for t, objs in enumerate(frames)
        for k, o in enumerate(objs)
    ]
    noisy = NoiseConfig(miss_rate=0.5, shift_rate=0.3, seed=77)
    via_tracks = tracks_to_sequence(rows, 40, 40, noisy)
    direct = build_sequence(frames, 40, 40, noisy)
    for (m1, t1), (m2, t2) in zip(via_tracks.frames, direct.frames):
        assert np.array_equal(m1, m2) and np.array_equal(t1, t2)
