import json
import os
import subprocess
import sys

import numpy as np
import pytest

from bursthdr.alignflow import read_flow
from bursthdr.cli import main
from bursthdr.tiffio import read_tiff16


def _tree(root):
    return {os.path.relpath(os.path.join(d, f), root): open(os.path.join(d, f), "rb").read()
            for d, _, files in os.walk(root) for f in files}


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth") / "a"
    assert main(["synth", "--out", str(out), "--scenes", "2", "--seed", "3", "--size", "64x128"]) == 0
    return out


def test_synth_is_deterministic(synth_dir, tmp_path):
    again = tmp_path / "b"
    assert main(["synth", "--out", str(again), "--scenes", "2", "--seed", "3", "--size", "64x128"]) == 0
    assert _tree(synth_dir) == _tree(again)
    assert sorted(p.name for p in synth_dir.iterdir()) == ["scene_0000", "scene_0001"]


def test_restore_and_dump_flow(synth_dir, tmp_path):
    out = tmp_path / "r" / "scene_0000.tif"
    flows = tmp_path / "flows"
    assert main(["restore", "--scene", str(synth_dir / "scene_0000"), "--out", str(out),
                 "--dump-flow", str(flows)]) == 0
    img = read_tiff16(out)
    assert img.shape == (64, 128, 3) and img.dtype == np.uint16
    f = read_flow(flows / "flow_1.bflow")
    assert f.dx.shape == (32, 64)          # packed resolution
    assert len(list(flows.iterdir())) == 9


def test_restore_tiled(synth_dir, tmp_path):
    out = tmp_path / "t.tif"
    assert main(["restore", "--scene", str(synth_dir / "scene_0001"), "--out", str(out),
                 "--tile", "64", "--overlap", "16"]) == 0
    assert read_tiff16(out).shape == (64, 128, 3)


def test_eval_gt_against_itself(synth_dir, tmp_path):
    report = tmp_path / "rep.json"
    assert main(["eval", "--pred", str(synth_dir), "--gt", str(synth_dir), "--report", str(report)]) == 0
    data = json.loads(report.read_text())
    assert data["mean_psnr_db"] == 100.0 and data["n_scenes"] == 2


def test_budget_command(tmp_path, capsys):
    report = tmp_path / "b.json"
    assert main(["budget", "--report", str(report)]) == 0
    assert "PASS" in capsys.readouterr().out
    assert json.loads(report.read_text())["pass"] is True
    graph = tmp_path / "big.json"
    graph.write_text(json.dumps({"nodes": [{"kind": "conv2d", "name": "huge", "param_count": 31_000_000,
                                            "params": {"cin": 1, "cout": 1, "kernel": 1,
                                                       "height": 8, "width": 8}}]}))
    assert main(["budget", "--config", str(graph)]) == 1


def test_exit_codes(tmp_path, synth_dir):
    assert main(["restore", "--scene", str(tmp_path / "nowhere"), "--out", str(tmp_path / "x.tif")]) == 2
    assert main(["synth", "--out", str(tmp_path), "--scenes", "1", "--seed", "0", "--size", "63x64"]) == 1
    assert main(["nonsense"]) == 1
    bad = tmp_path / "cfg.json"
    bad.write_text(json.dumps({"flow": "magic"}))
    assert main(["restore", "--scene", str(synth_dir / "scene_0000"), "--out", str(tmp_path / "y.tif"),
                 "--config", str(bad)]) == 1


def test_console_entry_point_runs():
    r = subprocess.run([sys.executable, "-m", "bursthdr.cli", "budget"], capture_output=True, text=True)
    assert r.returncode == 0 and "total" in r.stdout
