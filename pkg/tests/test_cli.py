import csv
import json
import shutil
import subprocess
from math import pi

import numpy as np
import pytest

from capflow.caps import cap_field
from capflow.cli import (
    EXIT_CONFIG,
    EXIT_NOT_CONVERGED,
    EXIT_OK,
    SERIES_SCHEMA,
    ConfigError,
    main,
    mesh_arrays,
    parse_theta,
    series_columns,
)
from capflow.flow import FlowConfig, FlowState, save_checkpoint
from capflow.geometry import SPHERE2D, build_grid


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def _csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# schema=")
    return lines[0], list(csv.reader(lines[1:]))


def _report(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_parse_theta():
    assert parse_theta("pi/3") == pi / 3
    assert parse_theta(" pi / 6 ") == pi / 6
    assert parse_theta(0.5) == 0.5
    assert parse_theta("1.25") == 1.25
    for bad in ("pi/5", "tau", True, None, [1]):
        with pytest.raises(ConfigError):
            parse_theta(bad)


def test_series_columns():
    cols = series_columns(2, 1, [(1, 0), (2, 1)])
    assert cols[:6] == ["t", "dt", "V_0", "V_1", "V_2", "V_3"]
    assert "af_gap_2_1" in cols and "minkowski_residual_1" in cols
    assert cols[-1] == "flag_monotone"


def test_cap_table(tmp_path):
    code = main(["cap-table", "--theta", "pi/2", "pi/3", "--r", "0.5", "1", "2", "--n-beta", "400", "--out", str(tmp_path)])
    assert code == EXIT_OK
    head, rows = _csv(tmp_path / "cap_table.csv")
    assert rows[0] == ["n", "theta", "r", "m", "numeric", "exact", "rel_error"]
    body = rows[1:]
    assert len(body) == 2 * 3 * 4
    assert max(abs(float(r[6])) for r in body) <= 1e-5
    hemi = [r for r in body if float(r[1]) == pi / 2 and float(r[2]) == 1.0]
    assert all(abs(float(r[6])) <= 1e-6 for r in hemi)


def test_cap_table_n3_scaling_exponents(tmp_path):
    assert main(["cap-table", "--n", "3", "--theta", "pi/3", "--r", "0.5", "1", "2", "--out", str(tmp_path)]) == 0
    _, rows = _csv(tmp_path / "cap_table.csv")
    data = np.array([[float(r[2]), int(r[3]), float(r[4])] for r in rows[1:]])
    for m in range(5):
        sel = data[data[:, 1] == m]
        slope = np.polyfit(np.log(sel[:, 0]), np.log(sel[:, 2]), 1)[0]
        assert abs(slope - (4 - m)) <= 1e-3


def test_cap_table_bad_arguments(tmp_path):
    assert main(["cap-table", "--r", "--out", str(tmp_path / "a")]) == EXIT_CONFIG
    assert main(["cap-table", "--r", "-1", "--out", str(tmp_path / "b")]) == EXIT_CONFIG
    assert main(["cap-table", "--theta", "2.5", "--out", str(tmp_path / "c")]) == EXIT_CONFIG
    assert not (tmp_path / "a").exists()


def test_unknown_command_is_config_error():
    assert main(["frobnicate"]) == EXIT_CONFIG
    assert main(["run"]) == EXIT_CONFIG


@pytest.mark.parametrize(
    "cfg",
    [
        "{not json",
        json.dumps({"n": 2, "k": 1}),
        json.dumps({"n": 2, "k": 1, "theta": "pi/3", "bogus": 1}),
        json.dumps({"n": 2, "k": 3, "theta": "pi/3"}),
        json.dumps({"n": 2, "k": 1, "theta": "pi/3", "seed": -4}),
        json.dumps({"n": 2, "k": 1, "theta": "pi/3", "initial": {"type": "perturbed_cap", "modes": [[12, 0.3]]}}),
    ],
)
def test_malformed_config_writes_nothing(tmp_path, cfg):
    path = tmp_path / "cfg.json"
    path.write_text(cfg)
    out = tmp_path / "out"
    assert main(["run", "--config", str(path), "--out", str(out), "--quiet"]) == EXIT_CONFIG
    assert not out.exists()


def test_run_cap(tmp_path):
    cfg = _write(tmp_path / "c.json", {"n": 2, "k": 1, "theta": "pi/3", "n_beta": 100, "initial": {"type": "cap", "r": 1.0}})
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out), "--quiet"]) == EXIT_OK
    head, rows = _csv(out / "series.csv")
    assert head == f"# schema={SERIES_SCHEMA}"
    assert rows[0] == series_columns(2, 1, [(1, 0), (2, 0), (2, 1)])
    assert len(rows) >= 2
    assert all(len(r) == len(rows[0]) for r in rows)
    assert len(rows[1][0]) == len(f"{0.0:.16e}")
    rec = _report(out / "report.json")
    assert len(rec) == 1 and rec[0]["schema_version"] == 1 and rec[0]["status"] == "converged"
    assert all(abs(g) <= 1e-4 for g in rec[0]["af_gaps"].values())
    assert rec[0]["r_error"] <= 1e-5
    assert (out / "final_state.json").exists()


def test_run_not_converged_has_failure_line(tmp_path):
    cfg = _write(
        tmp_path / "c.json",
        {
            "n": 2, "k": 1, "theta": "pi/3", "n_beta": 100, "t_max": 0.05, "emit_every": 50,
            "initial": {"type": "perturbed_cap", "modes": [[1, 0.05]]},
            "export_mesh": True,
        },
    )
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out), "--quiet"]) == EXIT_NOT_CONVERGED
    rec = _report(out / "report.json")
    assert rec[-1]["type"] == "failure" and rec[-1]["exit_code"] == EXIT_NOT_CONVERGED
    assert not (out / "mesh.obj").exists()


def test_run_deterministic_with_mesh(tmp_path):
    conf = {
        "n": 2, "k": 1, "theta": "pi/3", "n_beta": 80, "steady_tol": 1e-6, "steady_window": 10,
        "emit_every": 300, "initial": {"type": "perturbed_cap", "modes": [[1, 0.04]]},
        "export_mesh": True, "mesh_n_alpha": 16,
    }
    cfg = _write(tmp_path / "c.json", conf)
    outs = [tmp_path / "a", tmp_path / "b"]
    for o in outs:
        assert main(["run", "--config", cfg, "--out", str(o), "--quiet", "--seed", "7"]) == EXIT_OK
    for name in ("series.csv", "final_state.json", "mesh.obj", "report.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    rec = _report(outs[0] / "report.json")[0]
    assert rec["seed"] == 7 and rec["monitors_ok"]


def test_run_from_checkpoint_file(tmp_path):
    cfg = FlowConfig(n=2, k=1, theta=pi / 3, n_beta=60)
    save_checkpoint(FlowState(0.0, cap_field(cfg.grid(), 0.9, pi / 3)), cfg, tmp_path / "ck.json")
    conf = {"n": 2, "k": 1, "theta": "pi/3", "n_beta": 60, "initial": {"type": "file", "path": str(tmp_path / "ck.json")}}
    assert main(["run", "--config", _write(tmp_path / "c.json", conf), "--out", str(tmp_path / "o"), "--quiet"]) == 0
    rec = _report(tmp_path / "o" / "report.json")[0]
    assert rec["fitted_cap"]["r_fit"] == pytest.approx(0.9, abs=1e-12)
    conf["n_beta"] = 61
    assert main(["run", "--config", _write(tmp_path / "d.json", conf), "--out", str(tmp_path / "p"), "--quiet"]) == 2


def test_af_check_deterministic(tmp_path):
    conf = _write(tmp_path / "af.json", {"samples": 6, "n_beta": 200, "thetas": ["pi/2", "pi/3"]})
    for d in ("a", "b"):
        assert main(["af-check", "--config", conf, "--out", str(tmp_path / d), "--quiet", "--seed", "3"]) == EXIT_OK
    a = (tmp_path / "a" / "af_audit.csv").read_bytes()
    assert a == (tmp_path / "b" / "af_audit.csv").read_bytes()
    _, rows = _csv(tmp_path / "a" / "af_audit.csv")
    assert rows[0][-1] == "minkowski_gap" and len(rows) == 13
    gaps = np.array([[float(x) for x in r[6:]] for r in rows[1:]])
    assert gaps.min() > 0
    assert main(["af-check", "--config", conf, "--out", str(tmp_path / "c"), "--quiet", "--seed", "4"]) == EXIT_OK
    assert (tmp_path / "c" / "af_audit.csv").read_bytes() != a


def test_af_check_rejects_unknown_keys(tmp_path):
    conf = _write(tmp_path / "af.json", {"sample": 6})
    assert main(["af-check", "--config", conf, "--out", str(tmp_path / "a")]) == EXIT_CONFIG


def test_minkowski_check(tmp_path):
    assert main(["minkowski-check", "--out", str(tmp_path / "a"), "--quiet"]) == EXIT_OK
    _, rows = _csv(tmp_path / "a" / "minkowski.csv")
    assert rows[0] == ["n_beta", "residual_1", "residual_2", "order_1", "order_2"]
    orders = np.array([[float(x) for x in r[3:]] for r in rows[2:]])
    assert np.all((orders >= 1.7) & (orders <= 2.3))
    # caps on the hemisphere: round-off residuals, order test skipped
    conf = _write(tmp_path / "m.json", {"theta": "pi/2", "modes": []})
    assert main(["minkowski-check", "--config", conf, "--out", str(tmp_path / "b"), "--quiet"]) == EXIT_OK
    bad = _write(tmp_path / "bad.json", {"ladder": [100, 300]})
    assert main(["minkowski-check", "--config", bad, "--out", str(tmp_path / "c")]) == EXIT_CONFIG


def test_minkowski_check_sphere2d(tmp_path):
    conf = _write(
        tmp_path / "m.json",
        {"backend": SPHERE2D, "ladder": [24, 48, 96], "alpha_ratio": 1, "modes": [[0, 0.02], [2, 0.02]], "min_order": 1.7},
    )
    assert main(["minkowski-check", "--config", conf, "--out", str(tmp_path / "a"), "--quiet"]) == EXIT_OK


def _obj(path):
    verts, faces = [], []
    for line in path.read_text().splitlines():
        if line.startswith("v "):
            verts.append([float(x) for x in line.split()[1:]])
        elif line.startswith("f "):
            faces.append([int(x) for x in line.split()[1:]])
    return np.array(verts), np.array(faces)


def test_export_mesh_hemisphere_and_cap(tmp_path):
    cfg = FlowConfig(n=2, k=1, theta=pi / 2, n_beta=400)
    save_checkpoint(FlowState(0.0, cap_field(cfg.grid(), 1.0, pi / 2)), cfg, tmp_path / "h.json")
    assert main(["export-mesh", str(tmp_path / "h.json"), str(tmp_path / "h.obj")]) == EXIT_OK
    v, f = _obj(tmp_path / "h.obj")
    assert np.max(np.abs(np.linalg.norm(v, axis=1) - 1)) <= 1e-12
    assert f.min() == 1 and f.max() == len(v)

    th = pi / 3
    cfg = FlowConfig(n=2, k=1, theta=th, n_beta=400)
    save_checkpoint(FlowState(0.0, cap_field(cfg.grid(), 1.0, th)), cfg, tmp_path / "c.json")
    assert main(["export-mesh", str(tmp_path / "c.json"), str(tmp_path / "c.obj"), "--n-alpha", "32"]) == EXIT_OK
    v, _ = _obj(tmp_path / "c.obj")
    centre = np.array([0, 0, -np.cos(th)])
    assert np.max(np.abs(np.linalg.norm(v - centre, axis=1) - 1)) <= 1e-10
    assert np.min(v[:, 2]) == pytest.approx(0.0, abs=1e-10)


def test_export_mesh_sphere2d_layout():
    g = build_grid(2, SPHERE2D, 16, 8)
    v, f = mesh_arrays(cap_field(g, 1.0, pi / 2), pi / 2)
    assert v.shape == (1 + 17 * 8, 3)
    assert f.shape == (8 + 2 * 16 * 8, 3)
    # every vertex used; triangles are non-degenerate
    assert set(np.unique(f)) == set(range(len(v)))
    area = np.linalg.norm(np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]]), axis=1)
    assert area.min() > 0


def test_export_mesh_rejects_n3(tmp_path):
    cfg = FlowConfig(n=3, k=1, theta=pi / 3, n_beta=50)
    save_checkpoint(FlowState(0.0, cap_field(cfg.grid(), 1.0, pi / 3)), cfg, tmp_path / "n3.json")
    assert main(["export-mesh", str(tmp_path / "n3.json"), str(tmp_path / "x.obj")]) == EXIT_CONFIG
    assert not (tmp_path / "x.obj").exists()
    assert main(["export-mesh", str(tmp_path / "missing.json"), str(tmp_path / "x.obj")]) == EXIT_CONFIG


def test_convexify_command(tmp_path):
    conf = _write(
        tmp_path / "c.json",
        {"n": 2, "theta": "pi/3", "n_beta": 100, "t_stop": 0.005, "initial": {"type": "perturbed_cap", "modes": [[1, 0.05]]}},
    )
    assert main(["convexify", "--config", conf, "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_OK
    rec = _report(tmp_path / "o" / "report.json")[0]
    assert rec["min_kappa_final"] >= rec["min_kappa_initial"]
    assert (tmp_path / "o" / "convexified_state.json").exists()
    bad = _write(tmp_path / "b.json", {"n": 2, "theta": "pi/3", "t_stop": -1})
    assert main(["convexify", "--config", bad, "--out", str(tmp_path / "p")]) == EXIT_CONFIG


def test_threads_env(monkeypatch, tmp_path):
    monkeypatch.setenv("CAPFLOW_THREADS", "zero")
    assert main(["cap-table", "--out", str(tmp_path)]) == EXIT_CONFIG
    monkeypatch.setenv("CAPFLOW_THREADS", "1")
    assert main(["cap-table", "--out", str(tmp_path)]) == EXIT_OK


@pytest.mark.skipif(shutil.which("capflow") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(
        ["capflow", "cap-table", "--theta", "pi/2", "--r", "1", "--n-beta", "100"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert proc.stdout.startswith("# schema=capflow-cap-table/1")
    proc = subprocess.run(["capflow", "run", "--config", str(tmp_path / "nope.json")], capture_output=True, text=True)
    assert proc.returncode == 2 and "config" in proc.stderr
