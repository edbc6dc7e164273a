import json
import subprocess
import sys

import pytest

from codyn.bev import GridSpec, RoiBox, SparseFeatureMap
from codyn.cli import main
from codyn.message import RawUncertainty, pack_message

RUN_CFG = """
scenario:
  frames: 4
sweep:
  delays_ms: [300]
  noise_levels: [0.0]
  variants: [full, late-fusion]
  seeds: [0]
"""


@pytest.fixture
def run_cfg(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text(RUN_CFG)
    return p


def test_missing_config(tmp_path, capsys):
    missing = tmp_path / "nope.yaml"
    assert main(["run", "--config", str(missing), "--out", str(tmp_path / "o")]) == 2
    assert str(missing) in capsys.readouterr().err


def test_bad_config_value(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("scenario:\n  frames: 0\n")
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_bad_variant_override(run_cfg, tmp_path):
    assert main(["run", "--config", str(run_cfg), "--out", str(tmp_path / "o"),
                 "--variants", "full,bogus"]) == 2


def test_run_rows_manifest_and_determinism(run_cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(run_cfg), "--out", str(a), "--seeds", "0,1"]) == 0
    assert main(["run", "--config", str(run_cfg), "--out", str(b), "--seeds", "0,1"]) == 0
    csv_a = (a / "report.csv").read_bytes()
    assert csv_a == (b / "report.csv").read_bytes()
    assert len(csv_a.decode().splitlines()) == 1 + 2 * 2 + 2
    man = json.loads((a / "manifest.json").read_text())
    assert len(man["config_sha256"]) == 64 and man["sweep"]["seeds"] == [0, 1]
    assert "delay=300,noise=0" in man["cell_wall_time_s"]


def test_inspect_round_trip(tmp_path, capsys):
    grid = GridSpec(-10.0, 10.0, -10.0, 10.0, 0.4, 8)
    rois = [RoiBox(0.8, 1, 2, 4, 2, 0.1), RoiBox(0.6, -3, 1, 4.4, 1.9, -2.0)]
    _, data = pack_message(7, 1500, rois, [RawUncertainty(0.1, 0.2, 0.3, 0.4)] * 2,
                           SparseFeatureMap(grid))
    (tmp_path / "m.cdtm").write_bytes(data)
    assert main(["inspect", str(tmp_path / "m.cdtm")]) == 0
    out = capsys.readouterr().out
    assert "sender 7" in out and "rois=2" in out and "cells=0" in out


def test_inspect_empty_message(tmp_path, capsys):
    _, data = pack_message(1, 0, [], [], SparseFeatureMap(GridSpec(0, 4, 0, 4, 0.4, 8)))
    (tmp_path / "e.cdtm").write_bytes(data)
    assert main(["inspect", str(tmp_path / "e.cdtm")]) == 0
    assert capsys.readouterr().out.strip().splitlines() == ["sender 1  t=0 ms  rois=0  cells=0  D=8"]


def test_inspect_bad_magic(tmp_path, capsys):
    (tmp_path / "x.cdtm").write_bytes(b"NOPE" + bytes(18))
    assert main(["inspect", str(tmp_path / "x.cdtm")]) == 3
    assert "bad magic" in capsys.readouterr().err


def test_unknown_preset_lists_choices(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "codyn", "demo", "nosuch", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode != 0
    assert all(p in proc.stderr for p in ("delay300", "posenoise", "bandwidth"))


def test_demo_delay300(tmp_path):
    assert main(["demo", "delay300", "--out", str(tmp_path)]) == 0
    for v in ("full", "no-dftm"):
        f = tmp_path / f"delay300_{v}.csv"
        assert f.exists() and len(f.read_text().splitlines()) > 1


def test_demo_bandwidth(tmp_path, capsys):
    assert main(["demo", "bandwidth", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "bandwidth_per_frame.csv").read_text().splitlines()
    assert rows[0].startswith("frame,t_ms,sender") and len(rows) > 1
    assert main(["inspect", str(tmp_path / "sample.cdtm")]) == 0


def test_demo_posenoise_zero_collapse(tmp_path):
    assert main(["demo", "posenoise", "--out", str(tmp_path)]) == 0
    assert ((tmp_path / "posenoise_full_sigma0.csv").read_bytes()
            == (tmp_path / "posenoise_full_noiseless.csv").read_bytes())


def test_outputs_stay_in_out_dir(tmp_path, monkeypatch):
    work = tmp_path / "cwd"
    work.mkdir()
    monkeypatch.chdir(work)
    assert main(["demo", "bandwidth", "--out", str(tmp_path / "o")]) == 0
    assert list(work.iterdir()) == []
