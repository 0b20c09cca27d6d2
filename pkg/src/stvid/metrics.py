"""Evaluation metrics and the forward-only throughput harness."""

import time
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .heads import box_iou

__all__ = ["top1_accuracy", "MotResult", "clear_mot", "measure_throughput", "BenchResult"]


def top1_accuracy(predictions, labels):
    if len(predictions) != len(labels):
        raise ValueError(f"length mismatch: {len(predictions)} vs {len(labels)}")
    if not predictions:
        raise ValueError("empty prediction list")
    return sum(int(p == l) for p, l in zip(predictions, labels)) / len(predictions)


@dataclass
class MotResult:
    mota: float
    motp: float
    fp: int
    fn: int
    idsw: int
    matches: int
    motp_defined: bool = True


def clear_mot(gt, pred, iou_gate=0.5):
    """CLEAR-MOT accounting with previous-correspondence carry-over.

    Per frame, matches from the previous frame are kept while still
    valid (IoU >= gate); the remainder is re-matched by a Hungarian
    assignment maximizing total IoU over gated pairs.  An ID switch is
    a matched ground-truth object whose predicted identity differs from
    its last matched identity.
    """
    if gt.total_boxes() == 0:
        raise ValueError("empty ground truth")
    fp = fn = idsw = 0
    iou_sum = 0.0
    n_matches = 0
    last_match = {}  # gt id -> pred id, persists across gaps
    prev_pairs = {}  # gt id -> pred id matched in the previous frame

    frames = sorted(set(gt.frames()) | set(pred.frames()))
    for frame in frames:
        gt_boxes = gt.boxes_at(frame)
        pred_boxes = pred.boxes_at(frame)
        pairs = {}

        # carry over still-valid correspondences
        for gid, pid in prev_pairs.items():
            if gid in gt_boxes and pid in pred_boxes:
                iou = box_iou(gt_boxes[gid], pred_boxes[pid])
                if iou >= iou_gate:
                    pairs[gid] = (pid, iou)

        free_g = [g for g in sorted(gt_boxes) if g not in pairs]
        used_p = {pid for pid, _ in pairs.values()}
        free_p = [p for p in sorted(pred_boxes) if p not in used_p]
        if free_g and free_p:
            iou_m = np.array(
                [[box_iou(gt_boxes[g], pred_boxes[p]) for p in free_p] for g in free_g]
            )
            rows, cols = linear_sum_assignment(-iou_m)
            for r, c in zip(rows, cols):
                if iou_m[r, c] >= iou_gate:
                    pairs[free_g[r]] = (free_p[c], iou_m[r, c])

        for gid, (pid, iou) in pairs.items():
            if gid in last_match and last_match[gid] != pid:
                idsw += 1
            last_match[gid] = pid
            iou_sum += iou
            n_matches += 1
        fn += len(gt_boxes) - len(pairs)
        fp += len(pred_boxes) - len(pairs)
        prev_pairs = {gid: pid for gid, (pid, _) in pairs.items()}

    total_gt = gt.total_boxes()
    mota = 1.0 - (fp + fn + idsw) / total_gt
    if n_matches:
        return MotResult(mota, iou_sum / n_matches, fp, fn, idsw, n_matches)
    return MotResult(mota, 0.0, fp, fn, idsw, 0, motp_defined=False)


@dataclass
class BenchResult:
    mode: str
    threads: int
    frames: int
    fps_median: float
    fps_iqr: float
    fps_samples: list

    def csv_row(self):
        return (
            f"{self.mode},{self.threads},{self.frames},"
            f"{self.fps_median:.3f},{self.fps_iqr:.3f}"
        )


def measure_throughput(forward, clip_frames, mode, threads=1, warmup=1, measured=5):
    """Median frames/sec of forward-only inference over repeat runs.

    ``forward(frames, mode, threads)`` must not mutate any state.
    """
    if warmup < 1 or measured < 3:
        raise ValueError("need warmup >= 1 and measured >= 3")
    t_len = clip_frames.shape[0]
    for _ in range(warmup):
        forward(clip_frames, mode, threads)
    fps = []
    for _ in range(measured):
        t0 = time.perf_counter()
        forward(clip_frames, mode, threads)
        dt = time.perf_counter() - t0
        fps.append(t_len / dt)
    fps_arr = np.asarray(fps)
    q75, q25 = np.percentile(fps_arr, [75, 25])
    return BenchResult(mode, threads, t_len, float(np.median(fps_arr)), float(q75 - q25), fps)
