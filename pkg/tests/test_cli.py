import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import crossing_dict
from conewave.cli import main, run
from conewave.snapshot import read_snapshot


def _config(tmp_path, raw, name="scene.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return str(p)


def _load(path):
    return json.loads(path.read_text())


def test_rays_cone_rows_lie_on_flat_cone(tmp_path):
    cfg = _config(tmp_path, crossing_dict(n=128))
    assert run("rays", cfg, str(tmp_path / "out")) == 0
    with open(tmp_path / "out" / "rays.csv") as fh:
        rows = list(csv.DictReader(fh))
    cone = [r for r in rows if r["surface"] == "cone"]
    assert len(cone) > 20
    t = np.array([float(r["t"]) for r in cone])
    x = np.array([[float(r["x1"]), float(r["x2"])] for r in cone])
    np.testing.assert_allclose(np.linalg.norm(x, axis=1), t - 0.6, atol=1e-6)
    info = _load(tmp_path / "out" / "rays.json")
    assert info["on_interface"]
    assert info["rows"] == len(rows)


def test_floats_use_17_digits(tmp_path):
    cfg = _config(tmp_path, crossing_dict(n=128))
    run("rays", cfg, str(tmp_path / "out"))
    with open(tmp_path / "out" / "rays.csv") as fh:
        next(fh)
        row = next(fh).strip().split(",")
    for v in row[1:]:
        assert float(v) == float(format(float(v), ".17g"))


def test_negative_h_exits_2_and_names_field(tmp_path):
    raw = crossing_dict(n=64)
    del raw["grid"]["n"]
    raw["grid"]["h"] = -0.01
    cfg = _config(tmp_path, raw)
    out = tmp_path / "out"
    assert run("cross", cfg, str(out)) == 2
    err = _load(out / "error.json")
    assert err["exit_code"] == 2
    assert err["field"] == "grid.h"
    assert _load(out / "manifest.json")["exit_code"] == 2


def test_missing_config_exits_2(tmp_path):
    assert run("rays", str(tmp_path / "nope.json"), str(tmp_path / "out")) == 2
    assert _load(tmp_path / "out" / "error.json")["field"] == "config"


def test_cross_null_coefficient_is_zero(tmp_path):
    cfg = _config(tmp_path, crossing_dict(n=64, s0=0.1, alpha=0.0))
    out = tmp_path / "out"
    assert run("cross", cfg, str(out)) == 0
    rep = _load(out / "cross.json")
    assert rep["field_norm"] < 1e-10 * rep["amplitude_scale"]


def test_cross_artifacts_and_manifest(tmp_path):
    cfg = _config(tmp_path, crossing_dict(n=64, s0=0.1))
    out = tmp_path / "out"
    assert run("cross", cfg, str(out)) == 0
    man = _load(out / "manifest.json")
    assert len(man["config_hash"]) == 64
    assert man["exit_code"] == 0 and man["wall_time"] > 0
    assert {"numpy", "scipy", "conewave"} <= set(man["versions"])
    assert sorted(man["outputs"]) == ["cross.json", "cross_final.wfg", "cross_history.wfg"]
    hist, hdr = read_snapshot(out / "cross_history.wfg")
    final, _ = read_snapshot(out / "cross_final.wfg")
    assert hdr["dims"][1:] == [64, 64]
    np.testing.assert_array_equal(hist[-1], final)
    rep = _load(out / "cross.json")
    assert rep["field_norm"] > 0 and rep["born_discrepancy"] < 0.1


def test_cross_threads_bit_identical(tmp_path):
    cfg = _config(tmp_path, crossing_dict(n=64, s0=0.1))
    for k in (1, 8):
        assert run("cross", cfg, str(tmp_path / f"t{k}"), threads=k) == 0
    for name in ("cross_final.wfg", "cross_history.wfg"):
        assert (tmp_path / "t1" / name).read_bytes() == (tmp_path / "t8" / name).read_bytes()


def test_forward_snapshots_and_diagnostics(tmp_path):
    raw = crossing_dict(n=64, s0=0.1)
    raw["solver"]["save_every"] = 10
    cfg = _config(tmp_path, raw)
    out = tmp_path / "out"
    assert run("forward", cfg, str(out)) == 0
    snaps = sorted((out / "snapshots").glob("u_*.wfg"))
    assert len(snaps) >= 2
    arr, hdr = read_snapshot(snaps[-1])
    assert arr.shape == (64, 64) and hdr["time_index"] > 0
    with open(out / "diagnostics.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "time", "L2", "L4_accum", "energy"]
    assert len(rows) > 2


def test_main_entry_point(tmp_path):
    cfg = _config(tmp_path, crossing_dict(n=64))
    assert main(["rays", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    with pytest.raises(SystemExit):
        main(["bogus", "--config", cfg, "--out", str(tmp_path / "b")])
    proc = subprocess.run([sys.executable, "-m", "conewave", "rays", "--config", cfg,
                           "--out", str(tmp_path / "c"), "--threads", "0"],
                          capture_output=True)
    assert proc.returncode == 2
