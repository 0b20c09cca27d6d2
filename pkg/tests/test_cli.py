import numpy as np
import pytest

from stvid import runtime as rt
from stvid.cli import main
from stvid.synth import load_clip

TINY_INI = """
[run]
task = action
seed = 0
out_dir = {out_dir}

[model]
frames = 4
height = 8
width = 8
feature_dim = 4
encoder = 3:2:1:4:relu

[optimizer]
batch_size = 4

[data]
train_clips = 8
val_clips = 4

[train]
epochs = 2
"""


def write_config(tmp_path, **extra):
    text = TINY_INI.format(out_dir=tmp_path / "run")
    for section, line in extra.items():
        text += f"\n[{section}]\n{line}\n"
    path = tmp_path / "config.ini"
    path.write_text(text)
    return path


def test_gen_data_writes_loadable_clips(tmp_path, capsys):
    out = tmp_path / "clips"
    rc = main(["gen-data", "--task", "tracking", "--out", str(out), "--count", "3", "--seed", "1"])
    assert rc == 0
    files = sorted(out.glob("*.stvc"))
    assert len(files) == 3
    clip = load_clip(files[0])
    assert clip.tracks is not None
    assert "wrote 3 tracking clips" in capsys.readouterr().out


def test_train_eval_round_trip(tmp_path, capsys):
    cfg_path = write_config(tmp_path)
    assert main(["train", "--config", str(cfg_path)]) == 0
    out = capsys.readouterr().out
    assert "model.stvk" in out and "metrics.csv" in out
    run_dir = tmp_path / "run"
    assert (run_dir / "model.stvk").exists()
    metrics = (run_dir / "metrics.csv").read_text().strip().splitlines()
    assert metrics[0] == "epoch,lr,train_loss,val_metric"
    assert len(metrics) == 3

    data = tmp_path / "val"
    assert main(["gen-data", "--task", "action", "--out", str(data), "--count", "4"]) == 0
    capsys.readouterr()
    # generated defaults are 8x16x16; regenerate matching clips instead
    from stvid.synth import gen_action_clip, save_clip

    cfg = rt.load_config(cfg_path)
    spec = rt.clip_spec_of(cfg)
    small = tmp_path / "small"
    small.mkdir()
    for i in range(4):
        save_clip(gen_action_clip(i % 4, spec, seed=100 + i), small / f"c{i}.stvc")
    rc = main(["eval", "--checkpoint", str(run_dir / "model.stvk"), "--data", str(small)])
    assert rc == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0] == "metric,value,config_hash,seed"
    metric, value, chash, seed = out[1].split(",")
    assert metric == "top1_accuracy"
    assert 0.0 <= float(value) <= 1.0
    assert len(chash) == 12


def test_track_emits_mot_csv(tmp_path, capsys):
    cfg_path = write_config(tmp_path)
    text = cfg_path.read_text().replace("task = action", "task = tracking")
    cfg_path.write_text(text)
    assert main(["train", "--config", str(cfg_path)]) == 0
    capsys.readouterr()

    from stvid.synth import gen_tracking_clip, save_clip

    cfg = rt.load_config(cfg_path)
    clip_path = tmp_path / "clip.stvc"
    save_clip(gen_tracking_clip(cfg.objects, rt.clip_spec_of(cfg), seed=9), clip_path)
    out_csv = tmp_path / "tracks.csv"
    rc = main([
        "track",
        "--checkpoint", str(tmp_path / "run" / "model.stvk"),
        "--data", str(clip_path),
        "--out", str(out_csv),
    ])
    assert rc == 0
    lines = out_csv.read_text().strip().splitlines()
    assert lines[0] == "frame,id,x,y,w,h,conf"


def test_track_requires_tracking_checkpoint(tmp_path, capsys):
    cfg_path = write_config(tmp_path)
    assert main(["train", "--config", str(cfg_path)]) == 0
    capsys.readouterr()
    rc = main([
        "track",
        "--checkpoint", str(tmp_path / "run" / "model.stvk"),
        "--data", str(tmp_path),
        "--out", str(tmp_path / "x.csv"),
    ])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_bench_prints_both_modes(capsys):
    rc = main(["bench", "--T", "16", "--iters", "3", "--warmup", "1", "--threads", "2"])
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "mode,threads,T,fps_median,fps_iqr"
    modes = {l.split(",")[0] for l in lines[1:]}
    assert modes == {"sequential", "parallel"}
    for line in lines[1:]:
        mode, threads, t_len, fps, iqr = line.split(",")
        assert int(t_len) == 16 and int(threads) == 2
        assert float(fps) > 0


def test_gradcheck_command_exit_codes(tmp_path, capsys):
    cfg_path = write_config(tmp_path)
    text = cfg_path.read_text().replace("frames = 4", "frames = 3")
    cfg_path.write_text(text)
    rc = main(["gradcheck", "--config", str(cfg_path)])
    out = capsys.readouterr().out.strip().splitlines()
    assert rc == 0
    assert out[-1].startswith("max,")
    assert float(out[-1].split(",")[1]) < 1e-4


def test_cli_reports_errors_with_exit_code(tmp_path, capsys):
    rc = main(["eval", "--checkpoint", str(tmp_path / "nope.stvk"), "--data", str(tmp_path)])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_cli_requires_subcommand():
    with pytest.raises(SystemExit):
        main([])
