import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from strggrnn.data import (
    ETH_UCY_SETS, FrameRecord, GridMask, SceneMap, build_windows, leave_one_out_splits, load_scene_map,
    load_trajectories, parse_trajectories, write_trajectories,
)
from strggrnn.errors import FormatError, UsageError


def test_parse_positions_and_vislets():
    assert parse_trajectories(["10 3 1.5 2.0"]) == [FrameRecord(10, 3, 1.5, 2.0)]
    (r,) = parse_trajectories(["10 3 1.5 2.0 0.1 -0.2"])
    assert (r.vx, r.vy) == (0.1, -0.2) and r.has_vislet


def test_parse_sorts_and_accepts_commas():
    recs = parse_trajectories(["2,1,0,0", "1 2 0 0", "1 1 0 0"])
    assert [(r.frame_id, r.ped_id) for r in recs] == [(1, 1), (1, 2), (2, 1)]


@pytest.mark.parametrize("lines,where", [
    (["1 1 0 0", "2 1 0 0 0 0"], ":2:"),
    (["1 1 0 0", "1 1 3 3"], ":2:"),
    (["1 1 x 0"], ":1:"),
    (["1 1 0"], ":1:"),
])
def test_parse_errors_carry_line_numbers(lines, where):
    with pytest.raises(FormatError, match=where):
        parse_trajectories(lines, "f.txt")


def test_empty_file_warns(tmp_path, caplog):
    p = tmp_path / "empty.txt"
    p.write_text("")
    with caplog.at_level(logging.WARNING):
        assert load_trajectories(p) == []
    assert "no trajectory records" in caplog.text


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(OSError):
        load_trajectories(tmp_path / "nope.txt")


records_strategy = st.lists(
    st.tuples(st.integers(0, 50), st.integers(0, 9), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)),
    max_size=40, unique_by=lambda t: (t[0], t[1]))


@given(rows=records_strategy, vislets=st.booleans())
def test_write_load_round_trip(tmp_path_factory, rows, vislets):
    recs = sorted(FrameRecord(f, p, x, y, *((0.25, -0.5) if vislets else ())) for f, p, x, y in rows)
    path = tmp_path_factory.mktemp("rt") / "t.txt"
    write_trajectories(recs, path)
    assert load_trajectories(path) == recs


def _line(ped, frames, x0=0.0):
    return [FrameRecord(f, ped, x0 + f, 0.0) for f in frames]


def test_single_pedestrian_twenty_frames_gives_one_window():
    ws = build_windows(_line(1, range(20)), 8, 12, 1)
    assert len(ws) == 1
    w = ws[0]
    assert w.observed.shape == (1, 8, 2) and w.future.shape == (1, 12, 2) and w.presence_mask.all()


def test_gap_in_observation_excludes_pedestrian():
    recs = _line(1, range(20)) + _line(2, [f for f in range(20) if f != 5])
    (w,) = build_windows(sorted(recs), 8, 12, 1)
    assert w.ped_ids == [1]


def test_absent_future_steps_are_masked_and_hold_last_position():
    recs = _line(1, range(20)) + _line(2, range(10), x0=100.0)
    (w,) = build_windows(sorted(recs), 8, 12, 1)
    i = w.ped_ids.index(2)
    assert w.presence_mask[i].tolist() == [True, True] + [False] * 10
    assert np.array_equal(w.future[i, 2:], np.tile(w.future[i, 1], (10, 1)))


def test_overflow_keeps_twenty_by_future_presence():
    recs = []
    for p in range(25):
        # pedestrians 0..4 leave early, so they lose the future-presence ranking
        end = 10 if p < 5 else 20
        recs += _line(p, range(end))
    ws = build_windows(sorted(recs), 8, 12, 1)
    assert ws[0].n_peds == 20 and ws[0].ped_ids == list(range(5, 25))


def test_overflow_ties_go_to_lower_id():
    recs = [r for p in range(25) for r in _line(p, range(20))]
    (w,) = build_windows(sorted(recs), 8, 12, 1)
    assert w.ped_ids == list(range(20))


def test_no_complete_window_warns(caplog):
    with caplog.at_level(logging.WARNING):
        assert build_windows(_line(1, range(5)), 8, 12, 1) == []
    assert "no complete" in caplog.text


@given(n_peds=st.integers(1, 6), n_frames=st.integers(20, 30), stride=st.integers(1, 3), seed=st.integers(0, 99))
def test_windowing_conservation(n_peds, n_frames, stride, seed):
    rng = np.random.default_rng(seed)
    recs = sorted(FrameRecord(f, p, float(rng.normal()), float(rng.normal()))
                  for p in range(n_peds) for f in range(n_frames) if rng.random() > 0.05)
    index = {(r.frame_id, r.ped_id): r for r in recs}
    frames = sorted({r.frame_id for r in recs})
    for w in build_windows(recs, 8, 12, stride):
        start = frames.index(w.start_frame)
        for i, p in enumerate(w.ped_ids):
            for s in range(8):
                r = index[(frames[start + s], p)]
                assert (w.observed[i, s] == (r.x, r.y)).all()


def test_scene_map_from_pgm(tmp_path):
    p = tmp_path / "m.pgm"
    p.write_bytes(b"P5\n# comment\n2 2\n255\n" + bytes([0, 255, 255, 0]))
    assert np.array_equal(load_scene_map(p).cells, [[0, 1], [1, 0]])
    p2 = tmp_path / "a.pgm"
    p2.write_text("P2\n3 1\n255\n0 0 0\n")
    assert np.array_equal(load_scene_map(p2).cells, np.zeros((1, 3)))


def test_scene_map_from_csv(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("\n".join([",".join(["0.5"] * 8)] * 8))
    assert np.array_equal(load_scene_map(p).cells, np.full((8, 8), 0.5))
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3\n")
    with pytest.raises(FormatError):
        load_scene_map(bad)


def test_scene_and_mask_invariants():
    with pytest.raises(FormatError):
        SceneMap(np.full((2, 2), 1.5))
    with pytest.raises(FormatError):
        GridMask(np.zeros((8, 8)))
    with pytest.raises(FormatError):
        GridMask(np.ones((4, 4)))


def test_leave_one_out(caplog):
    assert leave_one_out_splits({"A": 1, "B": 2, "C": 3}, "C") == ([1, 2], 3)
    train, test = leave_one_out_splits({n: n for n in ETH_UCY_SETS}, "Zara1")
    assert len(train) == 5 and test == "Zara1"
    with caplog.at_level(logging.WARNING):
        assert leave_one_out_splits({"A": 1}, "A") == ([], 1)
    assert "no training" in caplog.text
    with pytest.raises(UsageError):
        leave_one_out_splits({"A": 1}, "B")
