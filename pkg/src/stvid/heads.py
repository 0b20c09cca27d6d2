"""Task heads: classification logits and detection + identity association.

Detection decodes a 1x1 conv over a frame's temporal features into
per-cell (confidence, center offset, size, embedding) records; the
association step matches detections to live tracks with a Hungarian
assignment on combined IoU / embedding-cosine cost.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import autodiff as ad
from .tensor_ops import TensorError, check_finite, sigmoid

__all__ = [
    "Detection",
    "TrackSet",
    "HeadParams",
    "classify",
    "cross_entropy",
    "box_iou",
    "detect_objects",
    "associate",
    "tracks_to_mot_csv",
    "mot_csv_to_tracks",
]


@dataclass
class Detection:
    frame: int
    cx: float
    cy: float
    w: float
    h: float
    embedding: np.ndarray
    confidence: float

    @property
    def box(self):
        return (self.cx, self.cy, self.w, self.h)


class TrackSet:
    """Mapping of track identity -> ordered (frame, box) entries.

    Frame indices per track strictly increase; one box per (track, frame).
    """

    def __init__(self):
        self.tracks = {}

    def add(self, track_id, frame, box):
        entries = self.tracks.setdefault(track_id, [])
        if entries and frame <= entries[-1][0]:
            raise ValueError(
                f"track {track_id}: frame {frame} not after {entries[-1][0]}"
            )
        entries.append((int(frame), tuple(float(v) for v in box)))

    def frames(self):
        out = set()
        for entries in self.tracks.values():
            out.update(f for f, _ in entries)
        return sorted(out)

    def boxes_at(self, frame):
        """{track_id: box} for one frame."""
        return {
            tid: box
            for tid, entries in self.tracks.items()
            for f, box in entries
            if f == frame
        }

    def total_boxes(self):
        return sum(len(e) for e in self.tracks.values())

    def __eq__(self, other):
        return isinstance(other, TrackSet) and self.tracks == other.tracks


@dataclass
class HeadParams:
    """Classifier (D -> K) and detector (1x1 conv D -> 5+E) weights."""

    cls_w: object = None  # (D, K)
    cls_b: object = None  # (K,)
    det_w: object = None  # (D, 5+E)
    det_b: object = None  # (5+E,)


def classify(rep, w, b):
    """Logits = rep @ W + b; no softmax here."""
    rv = ad.value_of(rep)
    wv = ad.value_of(w)
    if rv.ndim != 1 or wv.ndim != 2 or wv.shape[0] != rv.shape[0]:
        raise TensorError(f"classify shapes incompatible: rep {rv.shape}, W {wv.shape}")
    return ad.last_dim_linear(rep, w, b)


def cross_entropy(logits, label):
    """-log softmax(logits)[label]; see autodiff.cross_entropy."""
    return ad.cross_entropy(logits, label)


def box_iou(a, b):
    """IoU of two (cx, cy, w, h) boxes in normalized coordinates."""
    ax0, ay0 = a[0] - a[2] / 2, a[1] - a[3] / 2
    ax1, ay1 = a[0] + a[2] / 2, a[1] + a[3] / 2
    bx0, by0 = b[0] - b[2] / 2, b[1] - b[3] / 2
    bx1, by1 = b[0] + b[2] / 2, b[1] + b[3] / 2
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def detect_objects(g_t, det_w, det_b, frame=0, threshold=0.5):
    """Decode one frame's (H', W', D) features into Detections.

    Per cell the head emits (conf logit, dx, dy, w logit, h logit,
    embedding...).  Offsets are in cell units relative to the cell
    center; sizes pass through a logistic squash; centers clamp to
    [0, 1].
    """
    gv = check_finite(ad.value_of(g_t), "detection input")
    if gv.ndim != 3:
        raise TensorError(f"detect_objects expects (H,W,D), got shape {gv.shape}")
    hh, ww, _ = gv.shape
    raw = gv @ ad.value_of(det_w) + ad.value_of(det_b)  # (H, W, 5+E)
    conf = sigmoid(raw[..., 0])
    detections = []
    for i in range(hh):
        for j in range(ww):
            c = float(conf[i, j])
            if c <= threshold:
                continue
            dx, dy = float(raw[i, j, 1]), float(raw[i, j, 2])
            cx = min(1.0, max(0.0, (j + 0.5 + dx) / ww))
            cy = min(1.0, max(0.0, (i + 0.5 + dy) / hh))
            w = float(sigmoid(raw[i, j, 3]))
            h = float(sigmoid(raw[i, j, 4]))
            detections.append(
                Detection(frame, cx, cy, w, h, raw[i, j, 5:].copy(), c)
            )
    return detections


@dataclass
class _LiveTrack:
    box: tuple
    embedding: np.ndarray
    last_frame: int
    misses: int = 0


@dataclass
class TrackerState:
    """Active-track bookkeeping carried between associate calls."""

    live: dict = field(default_factory=dict)  # id -> _LiveTrack
    next_id: int = 1
    last_frame: int = -1


def _embedding_distance(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 1.0
    return 1.0 - float(np.dot(a, b) / (na * nb))


def associate(
    detections,
    tracks,
    state,
    iou_gate=0.1,
    embed_gate=1.0,
    lam=1.0,
    max_age=3,
):
    """Match one frame's detections to live tracks, updating ``tracks``.

    Cost is (1 - IoU) + lam * cosine embedding distance; a Hungarian
    assignment is computed, then matches violating either gate are
    dropped.  Unmatched detections open new tracks; tracks unmatched for
    more than ``max_age`` frames close.  Ties break toward lower track
    ids via the sorted cost-matrix row order.
    """
    if not detections:
        frame = state.last_frame + 1
    else:
        frames = {d.frame for d in detections}
        if len(frames) > 1:
            raise ValueError("detections span multiple frames")
        frame = frames.pop()
    if frame <= state.last_frame:
        raise ValueError(f"frame {frame} not after last processed {state.last_frame}")
    state.last_frame = frame

    track_ids = sorted(state.live)
    matched_dets, matched_tids = set(), set()
    if track_ids and detections:
        cost = np.zeros((len(track_ids), len(detections)))
        ok = np.zeros_like(cost, dtype=bool)
        for a, tid in enumerate(track_ids):
            t = state.live[tid]
            for b, det in enumerate(detections):
                iou = box_iou(t.box, det.box)
                ed = _embedding_distance(t.embedding, det.embedding)
                cost[a, b] = (1.0 - iou) + lam * ed
                ok[a, b] = iou >= iou_gate and ed <= embed_gate
        big = cost.max() + 10.0
        rows, cols = linear_sum_assignment(np.where(ok, cost, big))
        for a, b in zip(rows, cols):
            if not ok[a, b]:
                continue
            tid, det = track_ids[a], detections[b]
            t = state.live[tid]
            t.box, t.embedding, t.last_frame, t.misses = det.box, det.embedding, frame, 0
            tracks.add(tid, frame, det.box)
            matched_dets.add(b)
            matched_tids.add(tid)

    for b, det in enumerate(detections):
        if b in matched_dets:
            continue
        tid = state.next_id
        state.next_id += 1
        state.live[tid] = _LiveTrack(det.box, det.embedding, frame)
        tracks.add(tid, frame, det.box)

    for tid in list(state.live):
        if tid in matched_tids or state.live[tid].last_frame == frame:
            continue
        state.live[tid].misses += 1
        if state.live[tid].misses > max_age:
            del state.live[tid]
    return tracks


def tracks_to_mot_csv(tracks):
    """MOT-style CSV: frame,id,x,y,w,h,conf with 1-indexed frames and
    top-left box corners."""
    rows = ["frame,id,x,y,w,h,conf"]
    entries = []
    for tid, items in tracks.tracks.items():
        for frame, (cx, cy, w, h) in items:
            entries.append((frame + 1, tid, cx - w / 2, cy - h / 2, w, h))
    entries.sort()
    for frame, tid, x, y, w, h in entries:
        rows.append(f"{frame},{tid},{x:.6f},{y:.6f},{w:.6f},{h:.6f},1.0")
    return "\n".join(rows) + "\n"


def mot_csv_to_tracks(text):
    tracks = TrackSet()
    rows = []
    for line in text.strip().splitlines()[1:]:
        frame, tid, x, y, w, h, _ = line.split(",")
        rows.append((int(tid), int(frame) - 1, float(x), float(y), float(w), float(h)))
    rows.sort()
    for tid, frame, x, y, w, h in rows:
        tracks.add(tid, frame, (x + w / 2, y + h / 2, w, h))
    return tracks
