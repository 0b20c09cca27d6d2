"""Run configuration, optimizer, training loop, and checkpoint format."""

import configparser
import hashlib
import io
import struct
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from . import model as mdl
from .encoder import parse_layer_spec
from .metrics import clear_mot, top1_accuracy
from .rng import SeededStream
from .synth import ClipSpec, gen_action_clip, gen_tracking_clip

__all__ = [
    "RunConfig",
    "config_to_text",
    "parse_config",
    "config_hash",
    "lr_schedule",
    "adam_step",
    "train",
    "TrainResult",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "evaluate",
    "gradcheck_model",
    "generate_dataset",
]

_CKPT_MAGIC = b"STVK"
_CKPT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class RunConfig:
    # [run]
    task: str = "action"
    seed: int = 0
    threads: int = 1
    out_dir: str = "runs/out"
    # [model]
    frames: int = 8
    height: int = 16
    width: int = 16
    channels: int = 1
    feature_dim: int = 8
    classes: int = 4
    embed_dim: int = 4
    encoder: str = "3:2:1:8:relu, 3:2:1:8:relu"
    temporal_mode: str = "parallel"
    chunk: int = 0  # 0 = ceil(T / threads)
    ablate_attention: bool = False
    # [optimizer]
    learning_rate: float = 1e-3
    decay_every: int = 30
    decay_factor: float = 0.1
    batch_size: int = 16
    # [data]
    train_clips: int = 160
    val_clips: int = 40
    noise: float = 0.0
    objects: int = 3
    square_side: int = 4
    max_speed: float = 1.0
    # [train]
    epochs: int = 50

    def validate(self):
        if self.task not in ("action", "tracking"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.temporal_mode not in ("sequential", "parallel"):
            raise ValueError(f"unknown temporal mode {self.temporal_mode!r}")
        for name in ("frames", "height", "width", "channels", "feature_dim", "classes",
                     "embed_dim", "batch_size", "threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay factor must be in (0, 1]")
        return self

    def model_spec(self):
        return mdl.ModelSpec(
            frames=self.frames,
            height=self.height,
            width=self.width,
            channels=self.channels,
            feature_dim=self.feature_dim,
            classes=self.classes,
            embed_dim=self.embed_dim,
            encoder=parse_layer_spec(self.encoder),
        )

    def chunk_or_default(self):
        if self.chunk > 0:
            return self.chunk
        return None  # temporal module derives ceil(T / workers)


_SECTIONS = {
    "run": ("task", "seed", "threads", "out_dir"),
    "model": (
        "frames", "height", "width", "channels", "feature_dim", "classes", "embed_dim",
        "encoder", "temporal_mode", "chunk", "ablate_attention",
    ),
    "optimizer": ("learning_rate", "decay_every", "decay_factor", "batch_size"),
    "data": ("train_clips", "val_clips", "noise", "objects", "square_side", "max_speed"),
    "train": ("epochs",),
}


def config_to_text(cfg):
    """Canonical INI serialization (fixed section and key order)."""
    out = []
    for section, keys in _SECTIONS.items():
        out.append(f"[{section}]")
        for key in keys:
            out.append(f"{key} = {getattr(cfg, key)}")
        out.append("")
    return "\n".join(out)


def parse_config(text):
    """Parse INI text over the defaults; unknown keys are errors."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_string(text)
    cfg = RunConfig()
    types = {f.name: f.type for f in fields(RunConfig)}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ValueError(f"unknown config section [{section}]")
        for key, raw in cp.items(section):
            if key not in _SECTIONS[section]:
                raise ValueError(f"unknown config key {key!r} in [{section}]")
            kind = types[key]
            if kind is bool or kind == "bool":
                value = raw.strip().lower() in ("1", "true", "yes", "on")
            elif kind is int or kind == "int":
                value = int(raw)
            elif kind is float or kind == "float":
                value = float(raw)
            else:
                value = raw.strip()
            setattr(cfg, key, value)
    return cfg.validate()


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def config_hash(cfg):
    return hashlib.sha256(config_to_text(cfg).encode()).hexdigest()[:12]


def lr_schedule(epoch, initial=1e-4, every=30, factor=0.1):
    """Stepped decay: initial * factor^floor(epoch / every)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return initial * factor ** (epoch // every)


def adam_step(params, grads, moments, step, lr):
    """One Adam update over a parameter dict; returns (params, moments, step).

    Moments is {name: (m, v)}; missing gradients leave a parameter
    untouched except for moment decay.
    """
    step = step + 1
    new_params, new_moments = {}, {}
    bc1 = 1.0 - ADAM_BETA1**step
    bc2 = 1.0 - ADAM_BETA2**step
    for name in sorted(params):
        p = ad.value_of(params[name])
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        else:
            g = np.asarray(g)
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {name}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {name}")
        m, v = moments.get(name, (np.zeros_like(p), np.zeros_like(p)))
        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g
        new_params[name] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        new_moments[name] = (m, v)
    return new_params, new_moments, step


# ---------------------------------------------------------------------------
# data + evaluation


def clip_spec_of(cfg):
    return ClipSpec(
        frames=cfg.frames,
        height=cfg.height,
        width=cfg.width,
        channels=cfg.channels,
        side=cfg.square_side,
        noise=cfg.noise,
        max_speed=cfg.max_speed,
    )


def generate_dataset(cfg):
    """Seeded train/val clip lists; every 5th clip seed goes to val."""
    spec = clip_spec_of(cfg)
    total = cfg.train_clips + cfg.val_clips
    train, val = [], []
    ti = vi = 0
    idx = 0
    while ti < cfg.train_clips or vi < cfg.val_clips:
        clip_seed = cfg.seed * 1_000_003 + idx
        is_val = idx % 5 == 0
        idx += 1
        if is_val and vi >= cfg.val_clips:
            is_val = False
        if not is_val and ti >= cfg.train_clips:
            is_val = True
        if cfg.task == "action":
            clip = gen_action_clip((vi if is_val else ti) % cfg.classes, spec, seed=clip_seed)
        else:
            clip = gen_tracking_clip(cfg.objects, spec, seed=clip_seed)
        (val if is_val else train).append(clip)
        if is_val:
            vi += 1
        else:
            ti += 1
        if idx > 10 * total + 10:
            raise RuntimeError("dataset split failed to converge")
    return train, val


def _forward_kw(cfg):
    return dict(
        mode=cfg.temporal_mode,
        chunk=cfg.chunk_or_default(),
        workers=cfg.threads,
        )


def evaluate(cfg, params, clips):
    """Validation metric: top-1 accuracy (action) or mean MOTA (tracking)."""
    spec = cfg.model_spec()
    kw = _forward_kw(cfg)
    if cfg.task == "action":
        preds = []
        for clip in clips:
            logits, _ = mdl.action_forward(
                clip.frames, params, spec, ablated=cfg.ablate_attention, **kw
            )
            preds.append(int(np.argmax(ad.value_of(logits))))
        return top1_accuracy(preds, [c.label for c in clips])
    motas = []
    for clip in clips:
        pred = mdl.run_tracker(clip.frames, params, spec, **kw)
        if pred.total_boxes() == 0:
            motas.append(0.0)
        else:
            motas.append(clear_mot(clip.tracks, pred).mota)
    return float(np.mean(motas))


@dataclass
class TrainResult:
    params: dict
    moments: dict
    step: int
    epochs: int
    metrics_rows: list  # CSV lines including header

    def metrics_csv(self):
        return "\n".join(self.metrics_rows) + "\n"


def train(cfg, progress=None):
    """Seeded minibatch training; deterministic at threads=1."""
    cfg.validate()
    spec = cfg.model_spec()
    train_clips, val_clips = generate_dataset(cfg)
    params = mdl.init_params(spec, cfg.seed, task=cfg.task)
    moments = {}
    step = 0
    kw = _forward_kw(cfg)
    if cfg.ablate_attention and cfg.task == "action":
        kw["ablated"] = True
    rows = ["epoch,lr,train_loss,val_metric"]
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg.learning_rate, cfg.decay_every, cfg.decay_factor)
        order = SeededStream(np.uint64(cfg.seed) ^ np.uint64(0xE0C0 + epoch)).shuffle_indices(
            len(train_clips)
        )
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_clips[i] for i in order[start : start + cfg.batch_size]]
            nodes = {k: ad.param(v, k) for k, v in params.items()}
            targets = [c.label if cfg.task == "action" else c.tracks for c in batch]
            loss = mdl.batch_mean_loss(
                [c.frames for c in batch], targets, nodes, spec, task=cfg.task, **kw
            )
            lv = float(ad.value_of(loss))
            if not np.isfinite(lv):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}"
                )
            grads = ad.backward(loss)
            params, moments, step = adam_step(params, grads, moments, step, lr)
            losses.append(lv)
        val_metric = evaluate(cfg, params, val_clips)
        rows.append(f"{epoch},{lr!r},{float(np.mean(losses))!r},{float(val_metric)!r}")
        if progress:
            progress(epoch, float(np.mean(losses)), val_metric)
    return TrainResult(params, moments, step, cfg.epochs, rows)


# ---------------------------------------------------------------------------
# checkpoint format


@dataclass
class Checkpoint:
    config_text: str
    params: dict
    moments: dict
    step: int
    epoch: int

    @property
    def config(self):
        return parse_config(self.config_text)


def _write_table(fh, table):
    fh.write(struct.pack("<I", len(table)))
    for name in sorted(table):
        arr = np.asarray(ad.value_of(table[name]), dtype="<f4")
        encoded = name.encode()
        fh.write(struct.pack("<H", len(encoded)))
        fh.write(encoded)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def _read_table(fh, what):
    raw = fh.read(4)
    if len(raw) != 4:
        raise ValueError(f"truncated checkpoint: missing {what} count")
    (n,) = struct.unpack("<I", raw)
    table = {}
    for _ in range(n):
        head = fh.read(2)
        if len(head) != 2:
            raise ValueError(f"truncated checkpoint: missing {what} entry name")
        (nlen,) = struct.unpack("<H", head)
        name = fh.read(nlen).decode()
        (ndim,) = struct.unpack("<B", fh.read(1))
        shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        count = int(np.prod(shape)) if shape else 1
        data = fh.read(4 * count)
        if len(data) != 4 * count:
            raise ValueError(f"truncated checkpoint: missing {what} data for {name!r}")
        table[name] = np.frombuffer(data, dtype="<f4").reshape(shape).astype(np.float64)
    return table


def save_checkpoint(ckpt, path):
    buf = io.BytesIO()
    buf.write(_CKPT_MAGIC)
    buf.write(struct.pack("<H", _CKPT_VERSION))
    cfg_bytes = ckpt.config_text.encode()
    buf.write(struct.pack("<I", len(cfg_bytes)))
    buf.write(cfg_bytes)
    buf.write(struct.pack("<I", ckpt.epoch))
    buf.write(struct.pack("<Q", ckpt.step))
    _write_table(buf, ckpt.params)
    _write_table(buf, {k: m for k, (m, _) in ckpt.moments.items()})
    _write_table(buf, {k: v for k, (_, v) in ckpt.moments.items()})
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CKPT_MAGIC:
            raise ValueError("bad checkpoint magic (not an STVK file)")
        raw = fh.read(2)
        if len(raw) != 2:
            raise ValueError("truncated checkpoint: missing version")
        (version,) = struct.unpack("<H", raw)
        if version != _CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        raw = fh.read(4)
        if len(raw) != 4:
            raise ValueError("truncated checkpoint: missing config length")
        (clen,) = struct.unpack("<I", raw)
        cfg_bytes = fh.read(clen)
        if len(cfg_bytes) != clen:
            raise ValueError("truncated checkpoint: missing config section")
        raw = fh.read(12)
        if len(raw) != 12:
            raise ValueError("truncated checkpoint: missing epoch/step section")
        epoch, step = struct.unpack("<IQ", raw)
        params = _read_table(fh, "parameter")
        m_table = _read_table(fh, "first-moment")
        v_table = _read_table(fh, "second-moment")
    config_text = cfg_bytes.decode()
    cfg = parse_config(config_text)
    expected = mdl.param_shapes(cfg.model_spec(), task=cfg.task)
    for name in sorted(set(expected) | set(params)):
        if name not in params:
            raise ValueError(f"checkpoint missing parameter {name!r}")
        if name not in expected:
            raise ValueError(f"checkpoint has unexpected parameter {name!r}")
        if params[name].shape != expected[name]:
            raise ValueError(
                f"parameter {name!r} shape {params[name].shape} != config shape {expected[name]}"
            )
    moments = {k: (m_table[k], v_table[k]) for k in params}
    return Checkpoint(config_text, params, moments, step, epoch)


def gradcheck_model(cfg, eps=1e-3, seeds=(0, 1, 4)):
    """Central-difference check of the full training loss per parameter.

    Returns {param name: max relative error}, maximized over seeds.
    """
    cfg.validate()
    spec = cfg.model_spec()
    clip_spec = clip_spec_of(cfg)
    kw = _forward_kw(cfg)
    if cfg.ablate_attention and cfg.task == "action":
        kw["ablated"] = True
    report = {}
    for seed in seeds:
        params = mdl.init_params(spec, seed, task=cfg.task)
        # move the check point off ReLU kinks: zero biases leave dark
        # pixels' pre-activations exactly at the nonsmooth point
        jitter = SeededStream(np.uint64(seed) ^ np.uint64(0x6A17))
        params = {k: v + (jitter.uniform(v.shape) * 0.4 - 0.2) for k, v in params.items()}
        if cfg.task == "action":
            clip = gen_action_clip(seed % cfg.classes, clip_spec, seed=seed)
            target = clip.label
        else:
            clip = gen_tracking_clip(cfg.objects, clip_spec, seed=seed)
            target = clip.tracks
        for name in sorted(params):
            others = {k: v for k, v in params.items() if k != name}

            def objective(p, _name=name, _others=others, _clip=clip, _target=target):
                full = dict(_others)
                full[_name] = p[_name]
                return mdl.batch_mean_loss(
                    [_clip.frames], [_target], full, spec, task=cfg.task, **kw
                )

            err = ad.gradcheck(objective, {name: params[name]}, eps=eps)
            report[name] = max(report.get(name, 0.0), err)
    return report
