"""Deterministic synthetic video: moving/scaling squares with exact truth.

Action clips show one bright square whose motion pattern is the class
label; tracking clips show several distinct-intensity squares on
constant-velocity, border-reflecting trajectories with exact per-frame
ground-truth boxes.  All randomness comes from the counter-based
SplitMix64 stream, so clips are a pure function of (arguments, seed).
"""

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .heads import TrackSet
from .rng import SeededStream

__all__ = [
    "ACTION_CLASSES",
    "ClipSpec",
    "VideoClip",
    "gen_action_clip",
    "gen_tracking_clip",
    "save_clip",
    "load_clip",
]

ACTION_CLASSES = ("move-right", "move-down", "grow", "shrink")

_MAGIC = b"STVC"
_VERSION = 1


@dataclass
class ClipSpec:
    frames: int = 8
    height: int = 16
    width: int = 16
    channels: int = 1
    side: int = 4
    noise: float = 0.0
    max_speed: float = 1.5  # tracking clips only, pixels per frame


@dataclass
class VideoClip:
    frames: np.ndarray  # (T, H, W, C), values in [0, 1]
    label: Optional[int] = None
    tracks: Optional[TrackSet] = None
    seed: int = 0


def _render_square(frame, top, left, side, value):
    h, w = frame.shape[:2]
    top = int(np.clip(top, 0, h - side))
    left = int(np.clip(left, 0, w - side))
    patch = frame[top : top + side, left : left + side, :]
    np.maximum(patch, value, out=patch)
    return top, left


def _add_noise(frames, level, stream):
    if level <= 0:
        return np.clip(frames, 0.0, 1.0)
    noise = (stream.uniform(frames.shape) * 2.0 - 1.0) * level
    return np.clip(frames + noise, 0.0, 1.0)


def gen_action_clip(class_id, spec=None, seed=0):
    """One labeled motion clip; the motion is the only class signal."""
    spec = spec or ClipSpec()
    if not 0 <= class_id < len(ACTION_CLASSES):
        raise ValueError(f"class id {class_id} out of range")
    if not 0.0 <= spec.noise < 0.5:
        raise ValueError("noise level must be in [0, 0.5)")
    t_len, h, w, c = spec.frames, spec.height, spec.width, spec.channels
    side = spec.side
    stream = SeededStream((seed << 3) ^ (class_id + 1))
    frames = np.zeros((t_len, h, w, c))

    name = ACTION_CLASSES[class_id]
    if name in ("move-right", "move-down"):
        travel = t_len - 1
        if name == "move-right":
            x0 = stream.integers(0, max(1, w - side - travel))
            y0 = stream.integers(0, max(1, h - side))
        else:
            x0 = stream.integers(0, max(1, w - side))
            y0 = stream.integers(0, max(1, h - side - travel))
        for t in range(t_len):
            x = x0 + (t if name == "move-right" else 0)
            y = y0 + (t if name == "move-down" else 0)
            _render_square(frames[t], y, x, side, 1.0)
    else:
        max_side = min(2 * side, h, w)
        cx = stream.integers(max_side // 2, w - max_side // 2 + 1)
        cy = stream.integers(max_side // 2, h - max_side // 2 + 1)
        for t in range(t_len):
            frac = t / max(1, t_len - 1)
            if name == "shrink":
                frac = 1.0 - frac
            s = side + int(round(frac * (max_side - side)))
            _render_square(frames[t], cy - s // 2, cx - s // 2, s, 1.0)

    frames = _add_noise(frames, spec.noise, stream)
    return VideoClip(frames, label=class_id, seed=seed)


def gen_tracking_clip(n_objects, spec=None, seed=0):
    """Multi-object clip with exact ground-truth boxes.

    Objects are squares of distinct intensity on constant-velocity,
    border-reflecting paths; boxes come from the same rounded pixel
    rectangle the renderer draws, so rendered mass always lies inside
    the recorded box.
    """
    spec = spec or ClipSpec()
    if not 1 <= n_objects <= 8:
        raise ValueError(f"n_objects {n_objects} out of range [1, 8]")
    t_len, h, w, c = spec.frames, spec.height, spec.width, spec.channels
    side = spec.side
    stream = SeededStream((seed << 3) ^ 0x7)
    frames = np.zeros((t_len, h, w, c))
    tracks = TrackSet()

    span_x, span_y = w - side, h - side
    for k in range(n_objects):
        intensity = 1.0 if n_objects == 1 else 0.4 + 0.6 * k / (n_objects - 1)
        x = stream.uniform() * span_x
        y = stream.uniform() * span_y
        vx = (stream.uniform() * 2.0 - 1.0) * spec.max_speed
        vy = (stream.uniform() * 2.0 - 1.0) * spec.max_speed
        for t in range(t_len):
            px = _reflect(x + vx * t, span_x)
            py = _reflect(y + vy * t, span_y)
            top, left = _render_square(frames[t], round(py), round(px), side, intensity)
            box = (
                (left + side / 2) / w,
                (top + side / 2) / h,
                side / w,
                side / h,
            )
            tracks.add(k + 1, t, box)

    frames = _add_noise(frames, spec.noise, stream)
    return VideoClip(frames, tracks=tracks, seed=seed)


def _reflect(p, span):
    """Fold a coordinate into [0, span] by reflection at both ends."""
    if span <= 0:
        return 0.0
    period = 2.0 * span
    p = p % period
    return period - p if p > span else p


# ---------------------------------------------------------------------------
# flat binary clip format


def save_clip(clip, path):
    """Write the STVC container: header, f32 pixels, tagged sections."""
    t_len, h, w, c = clip.frames.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<H", _VERSION))
        fh.write(struct.pack("<4I", t_len, h, w, c))
        fh.write(clip.frames.astype("<f4").tobytes())
        if clip.label is not None:
            fh.write(b"L")
            fh.write(struct.pack("<I", clip.label))
        if clip.tracks is not None:
            fh.write(b"T")
            fh.write(struct.pack("<I", len(clip.tracks.tracks)))
            for tid in sorted(clip.tracks.tracks):
                entries = clip.tracks.tracks[tid]
                fh.write(struct.pack("<2I", tid, len(entries)))
                for frame, box in entries:
                    fh.write(struct.pack("<I4f", frame, *box))


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise ValueError(f"truncated clip file: missing {what}")
    return data


def load_clip(path):
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != _MAGIC:
            raise ValueError("bad clip magic (not an STVC file)")
        (version,) = struct.unpack("<H", _read_exact(fh, 2, "version"))
        if version != _VERSION:
            raise ValueError(f"unsupported clip version {version}")
        t_len, h, w, c = struct.unpack("<4I", _read_exact(fh, 16, "dimensions"))
        raw = _read_exact(fh, 4 * t_len * h * w * c, "pixel data")
        frames = np.frombuffer(raw, dtype="<f4").reshape(t_len, h, w, c).astype(np.float64)
        clip = VideoClip(frames)
        while True:
            tag = fh.read(1)
            if not tag:
                break
            if tag == b"L":
                (clip.label,) = struct.unpack("<I", _read_exact(fh, 4, "label section"))
            elif tag == b"T":
                (n_tracks,) = struct.unpack("<I", _read_exact(fh, 4, "track count"))
                tracks = TrackSet()
                for _ in range(n_tracks):
                    tid, n = struct.unpack("<2I", _read_exact(fh, 8, "track header"))
                    for _ in range(n):
                        frame, cx, cy, bw, bh = struct.unpack(
                            "<I4f", _read_exact(fh, 20, "track entry")
                        )
                        tracks.add(tid, frame, (cx, cy, bw, bh))
                clip.tracks = tracks
            else:
                raise ValueError(f"unknown section tag {tag!r}")
    return clip
