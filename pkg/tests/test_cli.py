import json
import os

import numpy as np
import pytest
import yaml

from fracrte import cli
from fracrte.io import read_field_binary


def _write_config(tmp_path, overrides=None, name="cfg.yaml"):
    cfg = {
        "schema_version": 1,
        "grid": {
            "ell": 1.0, "nx": 17, "v0": 0.5, "v1": 1.5, "nv": 2,
            "t_final": 1.0, "nt": 40,
        },
        "coefficients": {
            "bound_M": 10.0,
            "sigma_t": {"kind": "constant", "value": 1.0},
            "sigma_s": {"kind": "constant", "value": 0.5},
            "phase": {"kind": "normalized"},
        },
        "weights": {
            "lambda_list": [1.0],
            "s_list": [5.0, 10.0, 20.0, 40.0],
            "t0": 0.5,
            "delta": 0.25,
            "eps_det": 1e-8,
        },
        "experiment": {"mode": "forward", "data": "vacuum"},
        "output": {"prefix": "t"},
    }
    if overrides:
        for key, val in overrides.items():
            if isinstance(val, dict):
                cfg.setdefault(key, {}).update(val)
            else:
                cfg[key] = val
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def test_validate_reports_window_violation(tmp_path, capsys):
    path = _write_config(tmp_path, {"weights": {"delta": 0.6}})
    code = cli.main(["validate", "--config", path])
    assert code == 1
    err = json.loads(capsys.readouterr().err)
    assert any("window violates 0<delta<min(t0,T-t0)" in d for d in err["diagnostics"])


def test_validate_reports_bad_speed_and_collects_all(tmp_path, capsys):
    path = _write_config(tmp_path, {"grid": {"v0": -1.0}, "weights": {"delta": 0.9}})
    code = cli.main(["validate", "--config", path])
    assert code == 1
    err = json.loads(capsys.readouterr().err)
    assert len(err["diagnostics"]) >= 2
    assert any("v0" in d for d in err["diagnostics"])


def test_validate_clean_config(tmp_path, capsys):
    path = _write_config(tmp_path)
    code = cli.main(["validate", "--config", path])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["diagnostics"] == []


def test_forward_vacuum_run_and_binary_roundtrip(tmp_path):
    path = _write_config(
        tmp_path,
        {"experiment": {"mode": "forward", "data": "vacuum", "snapshot_binary": True}},
    )
    out_dir = str(tmp_path / "out")
    assert cli.main(["forward", "--config", path, "--out-dir", out_dir]) == 0
    dims, values = read_field_binary(os.path.join(out_dir, "t_field.bin"))
    assert dims == (17, 4, 40)
    assert np.all(values == 0.0)
    manifest = json.load(open(os.path.join(out_dir, "manifest.json")))
    assert manifest["subcommand"] == "forward"
    assert "t_field.csv" in manifest["artifacts"]
    assert len(manifest["config_sha256"]) == 64


def test_forward_reproducibility_bit_identical(tmp_path):
    path = _write_config(tmp_path, {"experiment": {"mode": "forward", "data": "even_relaxation"}})
    out1 = str(tmp_path / "a")
    out2 = str(tmp_path / "b")
    assert cli.main(["forward", "--config", path, "--out-dir", out1]) == 0
    assert cli.main(["forward", "--config", path, "--out-dir", out2]) == 0
    for name in ("t_field.csv", "t_forward_report.csv", "manifest.json"):
        b1 = open(os.path.join(out1, name), "rb").read()
        b2 = open(os.path.join(out2, name), "rb").read()
        assert b1 == b2


def test_carleman_stationary_sweep_rows(tmp_path):
    path = _write_config(
        tmp_path, {"experiment": {"mode": "carleman", "estimate": "stationary"}}
    )
    out_dir = str(tmp_path / "out")
    assert cli.main(["carleman", "--config", path, "--out-dir", out_dir]) == 0
    lines = open(os.path.join(out_dir, "t_carleman_sweep.csv")).read().splitlines()
    assert lines[0] == "lambda,s,lhs,rhs_interior,rhs_boundary,rhs_trace0,c_emp"
    assert len(lines) == 1 + 4  # one row per s value
    knee = open(os.path.join(out_dir, "t_carleman_knee.csv")).read().splitlines()
    assert knee[0] == "lambda,s_knee"


def test_stability_zero_amplitude_warns_but_succeeds(tmp_path, capsys):
    path = _write_config(
        tmp_path,
        {
            "grid": {"nx": 13, "nt": 30},
            "experiment": {"mode": "stability", "amplitudes": [0.0], "solver_tol": 1e-10},
        },
    )
    out_dir = str(tmp_path / "out")
    with pytest.warns(UserWarning):
        code = cli.main(["stability", "--config", path, "--out-dir", out_dir])
    assert code == 0
    assert "degenerates" in capsys.readouterr().err
    lines = open(os.path.join(out_dir, "t_stability_sweep.csv")).read().splitlines()
    assert len(lines) == 2


def test_invert_writes_profiles_and_runlog(tmp_path):
    path = _write_config(
        tmp_path,
        {
            "grid": {"nx": 21, "nt": 60},
            "experiment": {"mode": "invert", "amplitudes": [0.05], "solver_tol": 1e-10},
        },
    )
    out_dir = str(tmp_path / "out")
    assert cli.main(["invert", "--config", path, "--out-dir", out_dir]) == 0
    rec = open(os.path.join(out_dir, "t_reconstruction.csv")).read().splitlines()
    assert rec[0] == "x,v,r_t,r_s,r_t_true,r_s_true"
    assert len(rec) == 1 + 21 * 4
    log = open(os.path.join(out_dir, "t_runlog.csv")).read().splitlines()
    assert log[0].startswith("scenario,mode,amplitude")
    assert len(log) == 2


def test_invert_refuses_vanishing_phase_function(tmp_path, capsys):
    table = tmp_path / "p.csv"
    rows = ["x,v,vprime,value"]
    for i in range(13):
        for a in range(4):
            for b in range(4):
                rows.append(f"{i},{a},{b},0.0")
    table.write_text("\n".join(rows) + "\n")
    path = _write_config(
        tmp_path,
        {
            "grid": {"nx": 13, "nt": 30},
            "coefficients": {"phase": {"kind": "table", "path": "p.csv"}},
            "experiment": {"mode": "invert", "amplitudes": [0.05], "solver_tol": 1e-10},
        },
    )
    out_dir = str(tmp_path / "out")
    with pytest.warns(UserWarning, match="not strictly positive"):
        code = cli.main(["invert", "--config", path, "--out-dir", out_dir])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "HypothesisGateError"
    assert "det" in err["message"]


def test_reduce_mode_writes_report(tmp_path):
    path = _write_config(
        tmp_path,
        {
            "grid": {"nx": 17, "nt": 60, "v0": 0.1, "v1": 0.3},
            "experiment": {
                "mode": "reduce",
                "amplitudes": [0.05],
                "window": {"lo": 0.25, "hi": 0.75},
                "solver_tol": 1e-10,
            },
        },
    )
    out_dir = str(tmp_path / "out")
    assert cli.main(["reduce", "--config", path, "--out-dir", out_dir]) == 0
    lines = open(os.path.join(out_dir, "t_reduce_report.csv")).read().splitlines()
    assert lines[0] == "quantity,value"
    names = {line.split(",")[0] for line in lines[1:]}
    assert {"max_defect", "ref_scale", "relative"} <= names


def test_missing_config_is_reported(tmp_path, capsys):
    code = cli.main(["forward", "--config", str(tmp_path / "nope.yaml")])
    assert code == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "FileNotFoundError"


def test_tabulated_sigma_roundtrip(tmp_path):
    table = tmp_path / "sig.csv"
    rows = ["x,v,value"]
    for i in range(17):
        for a in range(4):
            rows.append(f"{i},{a},{1.0 + 0.1 * i}")
    table.write_text("\n".join(rows) + "\n")
    path = _write_config(
        tmp_path, {"coefficients": {"sigma_t": {"kind": "table", "path": "sig.csv"}}}
    )
    out_dir = str(tmp_path / "out")
    assert cli.main(["forward", "--config", path, "--out-dir", out_dir]) == 0
