import numpy as np
import pytest

from stvid.heads import (
    Detection,
    TrackerState,
    TrackSet,
    associate,
    box_iou,
    classify,
    cross_entropy,
    detect_objects,
    mot_csv_to_tracks,
    tracks_to_mot_csv,
)
from stvid.rng import SeededStream
from stvid.tensor_ops import TensorError, sigmoid


def test_box_iou_hand_values():
    a = (0.5, 0.5, 0.2, 0.2)
    assert box_iou(a, a) == pytest.approx(1.0)
    assert box_iou(a, (0.9, 0.9, 0.1, 0.1)) == 0.0
    # half-width shift: intersection 0.1x0.2, union 2*0.04 - 0.02
    b = (0.6, 0.5, 0.2, 0.2)
    assert box_iou(a, b) == pytest.approx(0.02 / 0.06)
    assert box_iou((0, 0, 0, 0), (0, 0, 0, 0)) == 0.0  # degenerate boxes


def test_classify_shapes_and_values():
    rep = np.array([1.0, -1.0])
    w = np.array([[1.0, 0.0, 2.0], [0.0, 1.0, 2.0]])
    b = np.array([0.5, 0.5, 0.0])
    np.testing.assert_allclose(classify(rep, w, b), [1.5, -0.5, 0.0])
    with pytest.raises(TensorError):
        classify(np.ones((2, 2)), w, b)
    with pytest.raises(TensorError):
        classify(np.ones(3), w, b)


def test_cross_entropy_prefers_correct_class():
    good = float(cross_entropy(np.array([4.0, 0.0]), 0))
    bad = float(cross_entropy(np.array([4.0, 0.0]), 1))
    assert good < bad


def test_track_set_enforces_frame_order():
    ts = TrackSet()
    ts.add(1, 0, (0.5, 0.5, 0.1, 0.1))
    ts.add(1, 2, (0.6, 0.5, 0.1, 0.1))
    with pytest.raises(ValueError):
        ts.add(1, 2, (0.7, 0.5, 0.1, 0.1))
    assert ts.frames() == [0, 2]
    assert ts.total_boxes() == 2
    assert ts.boxes_at(2) == {1: (0.6, 0.5, 0.1, 0.1)}


def test_detect_objects_decodes_cells():
    # identity detection head: features hold the raw outputs directly
    hh = ww = 2
    d = 7  # 5 fields + 2 embedding dims
    g = np.full((hh, ww, d), -4.0)
    g[..., 1:] = 0.0
    g[0, 1] = [3.0, 0.25, -0.25, 0.0, 2.0, 1.0, 0.0]
    dets = detect_objects(g, np.eye(d), np.zeros(d), frame=5, threshold=0.5)
    assert len(dets) == 1
    det = dets[0]
    assert det.frame == 5
    assert det.confidence == pytest.approx(sigmoid(3.0))
    assert det.cx == pytest.approx((1 + 0.5 + 0.25) / ww)
    assert det.cy == pytest.approx((0 + 0.5 - 0.25) / hh)
    assert det.w == pytest.approx(0.5)
    assert det.h == pytest.approx(sigmoid(2.0))
    np.testing.assert_array_equal(det.embedding, [1.0, 0.0])


def test_detect_objects_clamps_centers_and_checks_rank():
    d = 5
    g = np.zeros((1, 1, d))
    g[0, 0] = [3.0, 10.0, -10.0, 0.0, 0.0]
    det = detect_objects(g, np.eye(d), np.zeros(d))[0]
    assert det.cx == 1.0 and det.cy == 0.0
    with pytest.raises(TensorError):
        detect_objects(np.zeros((2, 5)), np.eye(d), np.zeros(d))


def _det(frame, cx, cy, emb):
    return Detection(frame, cx, cy, 0.2, 0.2, np.asarray(emb, dtype=float), 0.9)


def test_associate_keeps_identities_across_frames():
    tracks = TrackSet()
    state = TrackerState()
    associate([_det(0, 0.2, 0.5, [1, 0]), _det(0, 0.8, 0.5, [0, 1])], tracks, state)
    associate([_det(1, 0.25, 0.5, [1, 0]), _det(1, 0.75, 0.5, [0, 1])], tracks, state)
    assert sorted(tracks.tracks) == [1, 2]
    assert [f for f, _ in tracks.tracks[1]] == [0, 1]
    assert tracks.tracks[1][1][1][0] == pytest.approx(0.25)


def test_associate_embedding_breaks_spatial_tie():
    tracks = TrackSet()
    state = TrackerState()
    associate([_det(0, 0.45, 0.5, [1, 0]), _det(0, 0.55, 0.5, [0, 1])], tracks, state)
    # both detections overlap both tracks; embeddings disambiguate
    associate([_det(1, 0.55, 0.5, [0, 1]), _det(1, 0.45, 0.5, [1, 0])], tracks, state)
    assert tracks.tracks[1][1][1][0] == pytest.approx(0.45)
    assert tracks.tracks[2][1][1][0] == pytest.approx(0.55)


def test_associate_opens_and_expires_tracks():
    tracks = TrackSet()
    state = TrackerState()
    associate([_det(0, 0.2, 0.2, [1, 0])], tracks, state, max_age=1)
    associate([], tracks, state, max_age=1)
    associate([], tracks, state, max_age=1)  # track 1 now expired
    associate([_det(3, 0.2, 0.2, [1, 0])], tracks, state, max_age=1)
    assert sorted(tracks.tracks) == [1, 2]


def test_associate_rejects_frame_regressions_and_mixed_frames():
    tracks = TrackSet()
    state = TrackerState()
    associate([_det(1, 0.5, 0.5, [1, 0])], tracks, state)
    with pytest.raises(ValueError):
        associate([_det(1, 0.5, 0.5, [1, 0])], tracks, state)
    with pytest.raises(ValueError):
        associate([_det(2, 0.5, 0.5, [1, 0]), _det(3, 0.5, 0.5, [1, 0])], tracks, state)


def test_mot_csv_round_trip():
    stream = SeededStream(60)
    tracks = TrackSet()
    for tid in (1, 2, 3):
        for frame in range(4):
            cx, cy = stream.uniform() * 0.8 + 0.1, stream.uniform() * 0.8 + 0.1
            tracks.add(tid, frame, (cx, cy, 0.25, 0.125))
    text = tracks_to_mot_csv(tracks)
    lines = text.strip().splitlines()
    assert lines[0] == "frame,id,x,y,w,h,conf"
    assert len(lines) == 1 + 12
    assert lines[1].startswith("1,")  # frames are 1-indexed
    back = mot_csv_to_tracks(text)
    assert sorted(back.tracks) == [1, 2, 3]
    for tid in back.tracks:
        for (fa, boxa), (fb, boxb) in zip(tracks.tracks[tid], back.tracks[tid]):
            assert fa == fb
            np.testing.assert_allclose(boxa, boxb, atol=1e-5)  # %.6f text precision
