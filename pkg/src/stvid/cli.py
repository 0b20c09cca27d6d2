"""Command-line surface: data generation, training, evaluation, tracking,
benchmarking, and gradient checking."""

import argparse
import os
import sys

import numpy as np

from . import autodiff as ad
from . import model as mdl
from . import runtime as rt
from .heads import tracks_to_mot_csv
from .metrics import clear_mot, measure_throughput, top1_accuracy
from .synth import gen_action_clip, gen_tracking_clip, load_clip, save_clip


def _load_config(args):
    cfg = rt.load_config(args.config) if args.config else rt.RunConfig()
    if getattr(args, "ablate_attention", False):
        cfg.ablate_attention = True
    if getattr(args, "threads", None):
        cfg.threads = args.threads
    if getattr(args, "temporal_mode", None):
        cfg.temporal_mode = args.temporal_mode
    return cfg.validate()


def _data_files(path):
    if os.path.isdir(path):
        names = sorted(n for n in os.listdir(path) if n.endswith(".stvc"))
        if not names:
            raise ValueError(f"no .stvc clips in {path}")
        return [os.path.join(path, n) for n in names]
    return [path]


def cmd_gen_data(args):
    cfg = rt.RunConfig(task=args.task, seed=args.seed)
    spec = rt.clip_spec_of(cfg)
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.count):
        seed = args.seed * 1_000_003 + i
        if args.task == "action":
            clip = gen_action_clip(i % cfg.classes, spec, seed=seed)
        else:
            clip = gen_tracking_clip(cfg.objects, spec, seed=seed)
        save_clip(clip, os.path.join(args.out, f"clip_{i:05d}.stvc"))
    print(f"wrote {args.count} {args.task} clips to {args.out}")
    return 0


def cmd_train(args):
    cfg = _load_config(args)
    os.makedirs(cfg.out_dir, exist_ok=True)
    result = rt.train(cfg)
    metrics_path = os.path.join(cfg.out_dir, "metrics.csv")
    with open(metrics_path, "w", encoding="utf-8") as fh:
        fh.write(result.metrics_csv())
    ckpt = rt.Checkpoint(
        rt.config_to_text(cfg), result.params, result.moments, result.step, result.epochs
    )
    ckpt_path = os.path.join(cfg.out_dir, "model.stvk")
    rt.save_checkpoint(ckpt, ckpt_path)
    last = result.metrics_rows[-1] if result.epochs else "(no epochs)"
    print(f"trained {cfg.task} model: {ckpt_path}")
    print(f"metrics: {metrics_path}")
    print(f"final: {last}")
    return 0


def _eval_clips(ckpt, files):
    cfg = ckpt.config
    spec = cfg.model_spec()
    kw = rt._forward_kw(cfg)
    clips = [load_clip(f) for f in files]
    rows = []
    chash = rt.config_hash(cfg)
    if cfg.task == "action":
        preds, labels = [], []
        for clip in clips:
            if clip.label is None:
                raise ValueError("action evaluation needs labeled clips")
            logits, _ = mdl.action_forward(
                clip.frames, ckpt.params, spec, ablated=cfg.ablate_attention, **kw
            )
            preds.append(int(np.argmax(ad.value_of(logits))))
            labels.append(clip.label)
        rows.append(f"top1_accuracy,{top1_accuracy(preds, labels)!r},{chash},{cfg.seed}")
    else:
        motas, motps = [], []
        for clip in clips:
            if clip.tracks is None:
                raise ValueError("tracking evaluation needs ground-truth tracks")
            pred = mdl.run_tracker(clip.frames, ckpt.params, spec, **kw)
            if pred.total_boxes() == 0:
                motas.append(0.0)
                motps.append(0.0)
            else:
                res = clear_mot(clip.tracks, pred)
                motas.append(res.mota)
                motps.append(res.motp)
        rows.append(f"mota,{float(np.mean(motas))!r},{chash},{cfg.seed}")
        rows.append(f"motp,{float(np.mean(motps))!r},{chash},{cfg.seed}")
    return rows


def cmd_eval(args):
    ckpt = rt.load_checkpoint(args.checkpoint)
    rows = _eval_clips(ckpt, _data_files(args.data))
    print("metric,value,config_hash,seed")
    for row in rows:
        print(row)
    return 0


def cmd_track(args):
    ckpt = rt.load_checkpoint(args.checkpoint)
    cfg = ckpt.config
    if cfg.task != "tracking":
        raise ValueError("track requires a tracking-task checkpoint")
    spec = cfg.model_spec()
    kw = rt._forward_kw(cfg)
    files = _data_files(args.data)
    if len(files) == 1 and not os.path.isdir(args.data):
        pred = mdl.run_tracker(load_clip(files[0]).frames, ckpt.params, spec, **kw)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(tracks_to_mot_csv(pred))
        print(f"wrote {args.out}")
        return 0
    os.makedirs(args.out, exist_ok=True)
    for f in files:
        pred = mdl.run_tracker(load_clip(f).frames, ckpt.params, spec, **kw)
        name = os.path.splitext(os.path.basename(f))[0] + ".csv"
        with open(os.path.join(args.out, name), "w", encoding="utf-8") as fh:
            fh.write(tracks_to_mot_csv(pred))
    print(f"wrote {len(files)} track files to {args.out}")
    return 0


def cmd_bench(args):
    cfg = _load_config(args)
    cfg.frames = args.T
    cfg.threads = args.threads
    spec = cfg.model_spec()
    params = {
        k: np.asarray(v, dtype=np.float32)
        for k, v in mdl.init_params(spec, cfg.seed, task="action").items()
    }
    stream_clip = gen_action_clip(
        0, rt.clip_spec_of(cfg), seed=cfg.seed
    ).frames.astype(np.float32)

    def forward(frames, mode, threads):
        mdl.action_forward(frames, params, spec, mode=mode, workers=threads)

    print("mode,threads,T,fps_median,fps_iqr")
    for mode in ("sequential", "parallel"):
        res = measure_throughput(
            forward, stream_clip, mode, threads=args.threads, warmup=args.warmup,
            measured=args.iters,
        )
        print(res.csv_row())
    return 0


def cmd_gradcheck(args):
    cfg = _load_config(args)
    report = rt.gradcheck_model(cfg, eps=args.eps)
    worst = 0.0
    for name in sorted(report):
        print(f"{name},{report[name]:.3e}")
        worst = max(worst, report[name])
    print(f"max,{worst:.3e}")
    return 0 if worst < 1e-4 else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="stvid", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic clips")
    p.add_argument("--task", choices=("action", "tracking"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train from a run configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--ablate-attention", action="store_true", dest="ablate_attention")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--temporal-mode", choices=("sequential", "parallel"), default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on clip data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("track", help="emit MOT-style CSV tracks")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("bench", help="parallel vs sequential throughput")
    p.add_argument("--config", default=None)
    p.add_argument("--threads", type=int, default=4)
    p.add_argument("--T", type=int, default=256)
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("--warmup", type=int, default=2)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--config", default=None)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--ablate-attention", action="store_true", dest="ablate_attention")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FloatingPointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
