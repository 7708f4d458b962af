import json
import subprocess
import sys

import numpy as np
import pytest

from slkd.checkpoint import load_checkpoint
from slkd.cli import run_command
from slkd.data import generate_clean, save_ppm

CFG = {
    "net": {"teacher": {"levels": 2, "blocks": [1, 1], "base_dim": 4, "unified_dim": 4},
            "student": {"levels": 2, "blocks": [1, 0], "base_dim": 4, "unified_dim": 4}},
    "train": {"steps": 3, "batch": 2, "patch": 16, "eval_every": 2},
    "data": {"root": "ds", "count": 5, "size": [16, 16], "holdout": 0.4},
}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "run.json"
    p.write_text(json.dumps(CFG))
    return p


def test_complexity_default_pair(capsys):
    assert run_command(["complexity"]) == 0
    out = capsys.readouterr().out
    assert "reduction" in out
    assert run_command(["complexity", "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["flops_reduction_pct"] > 80 and doc["params_reduction_pct"] > 80


def test_usage_errors_exit_1(capsys):
    assert run_command(["frobnicate"]) == 1
    assert run_command(["complexity", "--bogus"]) == 1
    assert run_command([]) == 1
    assert "usage" in capsys.readouterr().err


def test_eval_missing_checkpoint_exit_2(cfg_path, tmp_path, capsys):
    missing = tmp_path / "nope.ckpt"
    assert run_command(["eval", "--model", str(missing), "--config", str(cfg_path),
                        "--report", str(tmp_path / "r.json")]) == 2
    assert str(missing) in capsys.readouterr().err


def test_bad_config_exit_1(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"data": {"root": "d"}, "loss": {"alpha1": -1}}')
    assert run_command(["pretrain", "--config", str(p), "--out", str(tmp_path / "t.ckpt")]) == 1
    assert "loss.alpha1" in capsys.readouterr().err


def test_corrupt_checkpoint_exit_2(cfg_path, tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOPE")
    assert run_command(["eval", "--model", str(bad), "--config", str(cfg_path),
                        "--report", str(tmp_path / "r.json")]) == 2


def test_full_workflow_reproducible(cfg_path, tmp_path):
    assert run_command(["degrade", "--config", str(cfg_path), "--out", str(tmp_path / "ds")]) == 0
    assert len(list((tmp_path / "ds" / "degraded").iterdir())) == 5
    for tag in ("a", "b"):
        assert run_command(["pretrain", "--config", str(cfg_path), "--out", str(tmp_path / f"t{tag}.ckpt")]) == 0
        assert run_command(["distill", "--teacher-a", str(tmp_path / "ta.ckpt"), "--config", str(cfg_path),
                            "--out", str(tmp_path / f"s{tag}.ckpt")]) == 0
    assert (tmp_path / "ta.ckpt").read_bytes() == (tmp_path / "tb.ckpt").read_bytes()
    assert (tmp_path / "sa.ckpt").read_bytes() == (tmp_path / "sb.ckpt").read_bytes()

    def logs(name):
        rows = [json.loads(line) for line in (tmp_path / f"{name}.ckpt.log.jsonl").read_text().splitlines()]
        return [{k: v for k, v in r.items() if k != "wall"} for r in rows]

    sa = logs("sa")
    assert sa == logs("sb")
    assert {"l_nc", "l_et", "l_kl", "l_pixel", "l_all", "lr", "step"} <= set(sa[0])
    assert any(set(r) == {"step", "psnr", "ssim"} for r in sa)

    report = tmp_path / "report.json"
    assert run_command(["eval", "--model", str(tmp_path / "sa.ckpt"), "--config", str(cfg_path),
                        "--report", str(report)]) == 0
    doc = json.loads(report.read_text())
    assert len(doc["per_image"]) == 2
    assert doc["params"] == load_checkpoint(tmp_path / "sa.ckpt").num_params()


def test_distill_rejects_level_mismatch(cfg_path, tmp_path):
    from slkd.checkpoint import save_checkpoint
    from slkd.config import NetConfig
    from slkd.net import build_network

    t = tmp_path / "t3.ckpt"
    save_checkpoint(build_network(NetConfig(levels=3, blocks=(1, 1, 1), base_dim=4, unified_dim=4)), t)
    assert run_command(["distill", "--teacher-a", str(t), "--config", str(cfg_path),
                        "--out", str(tmp_path / "s.ckpt")]) == 1


@pytest.mark.parametrize("extractor", ["brisque", "piqe"])
def test_features_json(tmp_path, extractor):
    img = tmp_path / "img.ppm"
    save_ppm(img, generate_clean(1, (32, 32)))
    out = tmp_path / "f.json"
    assert run_command(["features", "--extractor", extractor, "--in", str(img), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["channels"] == 3
    if extractor == "brisque":
        assert np.asarray(doc["features"]).shape == (3, 18)
    else:
        assert np.asarray(doc["block_scores"]).shape == (3, 4, 4)


def test_features_malformed_image(tmp_path):
    img = tmp_path / "bad.ppm"
    img.write_bytes(b"P6\n4 4\n255\n\0")
    assert run_command(["features", "--extractor", "piqe", "--in", str(img), "--out", str(tmp_path / "f")]) == 2


def test_ablate_grid(cfg_path, tmp_path):
    out = tmp_path / "abl"
    cfg = dict(CFG, train=dict(CFG["train"], steps=1, eval_every=0))
    cfg_path.write_text(json.dumps(cfg))
    assert run_command(["ablate", "--config", str(cfg_path), "--out", str(out)]) == 0
    rows = json.loads((out / "ablation.json").read_text())["rows"]
    assert len(rows) == 8
    assert {(r["teacherB_input"], r["use_nc"], r["use_et"]) for r in rows} == {
        (b, nc, et) for b in ("clean", "degraded") for nc in (True, False) for et in (True, False)}


def test_console_script_gradcheck():
    res = subprocess.run([sys.executable, "-m", "slkd.cli", "gradcheck"], capture_output=True, text=True)
    assert res.returncode == 0, res.stdout + res.stderr
    assert "gradient checks passed" in res.stdout
