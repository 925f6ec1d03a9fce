"""Command-line orchestration.

One YAML configuration file drives one run:

    fracrte <subcommand> --config cfg.yaml [--out-dir DIR] [--threads N]
                         [--validate-only]

Subcommands: ``forward`` (solve and snapshot), ``reduce`` (residual report
of the first-order reformulation), ``carleman`` (estimate sweep over the
(s, lambda) lattice), ``invert`` (single reconstruction), ``stability``
(amplitude sweep with the empirical stability constant), ``validate``
(diagnostics only).

Configuration schema (schema_version 1)::

    schema_version: 1
    grid:
      ell: 1.0         # slab length
      nx: 60           # spatial nodes
      v0: 0.5          # lower speed bound
      v1: 1.5          # upper speed bound
      nv: 4            # velocity nodes per branch
      t_final: 1.0     # time horizon
      nt: 250          # time steps
      velocity_quadrature: gauss        # or trapezoid
    coefficients:
      bound_M: 10.0
      sigma_t: {kind: constant, value: 1.0}
      #        {kind: linear, value0: .., value1: .., tilt: 0.0}
      #        {kind: bump, base: .., amplitude: .., tilt: 0.0}
      #        {kind: table, path: sigma.csv}      # rows x_index,v_index,value
      sigma_s: {kind: constant, value: 0.5}
      phase:   {kind: normalized, modulation: 0.0}
      #        {kind: table, path: p.csv}  # rows x_index,v_index,vprime_index,value
    weights:
      lambda_list: [1.0, 2.0]
      s_list: [10.0, 20.0, 40.0, 80.0]
      t0: 0.5
      delta: 0.25
      d_choice: affine
      eps_det: 1.0e-8
    experiment:
      mode: stability        # forward | reduce | carleman | invert | stability
      data: even_relaxation  # forward mode: vacuum | even_relaxation
                             #               | odd_relaxation | ml_absorber
      kappa: 1.0             # odd-data amplitude
      snapshot_csv: true
      snapshot_binary: false
      amplitudes: [0.01, 0.02, 0.05, 0.1]
      tilt: 0.1
      scalar_mode: full2x2   # or sigma_t_only | sigma_s_only
      scheme: trapezoid      # x-march: trapezoid | euler
      include_x0_term: true
      window: {lo: 0.25, hi: 0.75}   # reduce mode residual window
      estimate: parabolic            # carleman mode: parabolic | stationary
      solver_tol: 1.0e-11
    output:
      prefix: run

Exit status 0 on success; validation failures exit 1 and runtime failures
exit 2, both with a machine-readable JSON record on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
import yaml

from fracrte import carleman, coefficients as coefs, forward as fw, inverse as inv, io as fio
from fracrte.grid import build_grid
from fracrte.reduction import ReducedOperators, build_f, build_ft, residual_reduced

SCHEMA_VERSION = 1
MODES = ("forward", "reduce", "carleman", "invert", "stability")
SIGMA_KINDS = ("constant", "linear", "bump", "table")
PHASE_KINDS = ("normalized", "table")
DATA_KINDS = ("vacuum", "even_relaxation", "odd_relaxation", "ml_absorber")


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    with open(path) as fh:
        cfg = yaml.safe_load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError("configuration must be a mapping")
    return cfg


def _get(cfg, section, key, default=None):
    return cfg.get(section, {}).get(key, default)


def validate(cfg: dict, config_dir: str = ".") -> list[str]:
    """Every violated invariant, collected without short-circuiting."""
    bad = []
    if cfg.get("schema_version") != SCHEMA_VERSION:
        bad.append(f"schema_version must be {SCHEMA_VERSION}")
    g = cfg.get("grid")
    if not isinstance(g, dict):
        bad.append("missing grid block")
        g = {}
    for key in ("ell", "nx", "v0", "v1", "nv", "t_final", "nt"):
        if key not in g:
            bad.append(f"grid.{key} is required")
    ell = g.get("ell", 1.0)
    t_final = g.get("t_final", 1.0)
    if ell is not None and ell <= 0:
        bad.append("grid.ell must be positive")
    if t_final is not None and t_final <= 0:
        bad.append("grid.t_final must be positive")
    for key in ("nx", "nv", "nt"):
        if g.get(key, 2) < 2:
            bad.append(f"grid.{key} must be at least 2")
    v0, v1 = g.get("v0", 1.0), g.get("v1", 2.0)
    if v0 is not None and v0 <= 0:
        bad.append("grid.v0 must be positive")
    if v0 is not None and v1 is not None and not (0 < v0 < v1):
        bad.append("grid velocity bounds must satisfy 0 < v0 < v1")
    if g.get("velocity_quadrature", "gauss") not in ("gauss", "trapezoid"):
        bad.append("grid.velocity_quadrature must be gauss or trapezoid")

    c = cfg.get("coefficients", {})
    if c.get("bound_M", 10.0) <= 0:
        bad.append("coefficients.bound_M must be positive")
    for name, kinds in (("sigma_t", SIGMA_KINDS), ("sigma_s", SIGMA_KINDS), ("phase", PHASE_KINDS)):
        block = c.get(name, {})
        kind = block.get("kind", kinds[0])
        if kind not in kinds:
            bad.append(f"coefficients.{name}.kind must be one of {kinds}")
        if kind == "table":
            path = block.get("path")
            if not path:
                bad.append(f"coefficients.{name}.path is required for tabulated data")
            elif not os.path.exists(os.path.join(config_dir, path)):
                bad.append(f"coefficients.{name}.path does not exist: {path}")

    wblock = cfg.get("weights", {})
    t0 = wblock.get("t0", 0.5 * (t_final or 1.0))
    delta = wblock.get("delta", 0.25 * (t_final or 1.0))
    if t_final and not (0 < t0 < t_final):
        bad.append("weights.t0 must lie inside (0, t_final)")
    elif t_final and not (0 < delta < min(t0, t_final - t0)):
        bad.append("window violates 0<delta<min(t0,T-t0)")
    if wblock.get("eps_det", 1e-8) <= 0:
        bad.append("weights.eps_det must be positive")

    e = cfg.get("experiment", {})
    mode = e.get("mode", "forward")
    if mode not in MODES:
        bad.append(f"experiment.mode must be one of {MODES}")
    if mode == "carleman":
        for key in ("lambda_list", "s_list"):
            values = wblock.get(key, [])
            if not values:
                bad.append(f"weights.{key} must be a non-empty list for carleman sweeps")
            elif any(x <= 0 for x in values):
                bad.append(f"weights.{key} entries must be positive")
        if e.get("estimate", "parabolic") not in ("parabolic", "stationary"):
            bad.append("experiment.estimate must be parabolic or stationary")
    if mode in ("invert", "stability", "reduce", "carleman"):
        amps = e.get("amplitudes", [0.05])
        if not isinstance(amps, list) or not amps:
            bad.append("experiment.amplitudes must be a non-empty list")
    if mode == "forward" and e.get("data", "vacuum") not in DATA_KINDS:
        bad.append(f"experiment.data must be one of {DATA_KINDS}")
    if e.get("scalar_mode", "full2x2") not in inv.MODES:
        bad.append(f"experiment.scalar_mode must be one of {inv.MODES}")
    if e.get("scheme", "trapezoid") not in ("trapezoid", "euler"):
        bad.append("experiment.scheme must be trapezoid or euler")
    win = e.get("window", {})
    if win:
        lo, hi = win.get("lo"), win.get("hi")
        if lo is None or hi is None or not (0 < lo < hi) or (t_final and hi >= t_final):
            bad.append("experiment.window must satisfy 0 < lo < hi < t_final")
    return bad


def _load_table(path, shape):
    data = np.zeros(shape)
    seen = np.zeros(shape, dtype=bool)
    with open(path) as fh:
        header = fh.readline()
        if header.strip() and not header.split(",")[0].strip().lstrip("-").isdigit():
            pass  # skip header row
        else:
            fh.seek(0)
        for line in fh:
            if not line.strip():
                continue
            parts = line.split(",")
            idx = tuple(int(p) for p in parts[:-1])
            data[idx] = float(parts[-1])
            seen[idx] = True
    if not seen.all():
        raise ConfigError(f"tabulated file {path} does not cover the full grid")
    return data


def _build_sigma(grid, block, config_dir):
    kind = block.get("kind", "constant")
    if kind == "constant":
        return coefs.constant_sigma(grid, block.get("value", 1.0))
    if kind == "linear":
        return coefs.linear_sigma(
            grid, block.get("value0", 1.0), block.get("value1", 1.0), block.get("tilt", 0.0)
        )
    if kind == "bump":
        return coefs.bump_sigma(
            grid, block.get("base", 1.0), block.get("amplitude", 0.0), block.get("tilt", 0.0)
        )
    return _load_table(os.path.join(config_dir, block["path"]), grid.shape_xv)


def _build_phase(grid, block, config_dir):
    kind = block.get("kind", "normalized")
    if kind == "normalized":
        return coefs.normalized_phase(grid, block.get("modulation", 0.0))
    nx, nvt = grid.shape_xv
    return _load_table(os.path.join(config_dir, block["path"]), (nx, nvt, nvt))


def build_problem(cfg: dict, config_dir: str):
    g = cfg["grid"]
    grid = build_grid(
        ell=g["ell"], nx=g["nx"], v0=g["v0"], v1=g["v1"], nv=g["nv"],
        t_final=g["t_final"], nt=g["nt"],
        velocity_quadrature=g.get("velocity_quadrature", "gauss"),
    )
    c = cfg.get("coefficients", {})
    coeffs = coefs.CoefficientSet(
        sigma_t=_build_sigma(grid, c.get("sigma_t", {}), config_dir),
        sigma_s=_build_sigma(grid, c.get("sigma_s", {"kind": "constant", "value": 0.0}), config_dir),
        p=_build_phase(grid, c.get("phase", {}), config_dir),
        bound_M=c.get("bound_M", 10.0),
        grid=grid,
    )
    return grid, coeffs


def _run_forward(cfg, grid, coeffs, out_dir, prefix):
    e = cfg.get("experiment", {})
    kind = e.get("data", "vacuum")
    if kind == "vacuum":
        data = fw.data_vacuum(grid)
    elif kind == "even_relaxation":
        data = fw.data_even_relaxation(grid, coeffs)
    elif kind == "odd_relaxation":
        data = fw.data_odd_relaxation(grid, coeffs, kappa=e.get("kappa", 1.0))
    else:
        data = fw.data_ml_absorber(grid)
    field = fw.solve_frte(grid, coeffs, data, tol=e.get("solver_tol", 1e-10))
    artifacts = []
    if e.get("snapshot_csv", True):
        path = os.path.join(out_dir, f"{prefix}_field.csv")
        fio.write_field_csv(path, field)
        artifacts.append(os.path.basename(path))
    if e.get("snapshot_binary", False):
        path = os.path.join(out_dir, f"{prefix}_field.bin")
        fio.write_field_binary(path, field)
        artifacts.append(os.path.basename(path))
    report = os.path.join(out_dir, f"{prefix}_forward_report.csv")
    fio.write_report_csv(
        report,
        [("residual_max", fw.residual_frte(field, coeffs, data)),
         ("final_l2_norm", grid.discrete_norm(field.values[-1], "l2"))],
    )
    artifacts.append(os.path.basename(report))
    return artifacts


def _twin(cfg, grid, coeffs, amplitude):
    e = cfg.get("experiment", {})
    tilt = e.get("tilt", 0.1)
    r_t = coefs.perturbation_bump(grid, amplitude, tilt)
    r_s = coefs.perturbation_bump(grid, 0.8 * amplitude, -tilt)
    mode = e.get("scalar_mode", "full2x2")
    if mode == "sigma_t_only":
        r_s = np.zeros_like(r_s)
    elif mode == "sigma_s_only":
        r_t = np.zeros_like(r_t)
    bundle = inv.make_twin_bundle(
        grid, coeffs, r_t, r_s, mode=mode, solver_tol=e.get("solver_tol", 1e-11)
    )
    return bundle, r_t, r_s


def _run_reduce(cfg, grid, coeffs, out_dir, prefix):
    e = cfg.get("experiment", {})
    amplitude = e.get("amplitudes", [0.05])[0]
    bundle, r_t, r_s = _twin(cfg, grid, coeffs, amplitude)
    ops = ReducedOperators(grid=grid, coeffs=bundle.coeffs_first)
    r_field = inv.build_R(bundle, e.get("scalar_mode", "full2x2"))
    r_true = np.stack([r_t, r_s])
    win = e.get("window", {"lo": 0.25 * grid.time.t_final, "hi": 0.75 * grid.time.t_final})
    k_lo = grid.time.index_of(win["lo"])
    k_hi = grid.time.index_of(win["hi"])
    rep = residual_reduced(
        bundle.differences(), ops,
        lambda k: build_f(r_field, r_true, ops, k), (k_lo, k_hi),
    )
    path = os.path.join(out_dir, f"{prefix}_reduce_report.csv")
    fio.write_report_csv(
        path,
        [("max_defect", rep.max_defect), ("ref_scale", rep.ref_scale),
         ("relative", rep.relative), ("window_lo", win["lo"]), ("window_hi", win["hi"])],
    )
    return [os.path.basename(path)]


def _run_carleman(cfg, grid, coeffs, out_dir, prefix):
    e = cfg.get("experiment", {})
    wb = cfg.get("weights", {})
    base = carleman.WeightParams(
        lam=wb["lambda_list"][0], s=wb["s_list"][0],
        t0=wb.get("t0", 0.5 * grid.time.t_final),
        delta=wb.get("delta", 0.25 * grid.time.t_final),
    )
    if e.get("estimate", "parabolic") == "stationary":
        w_slice = np.tile(grid.space.nodes[:, None], (1, grid.velocity.n_total))
        evaluator = lambda wf, s: carleman.evaluate_stationary_estimate(
            w_slice, None, None, wf, s
        )
    else:
        amplitude = e.get("amplitudes", [0.05])[0]
        bundle, r_t, r_s = _twin(cfg, grid, coeffs, amplitude)
        ops = ReducedOperators(grid=grid, coeffs=bundle.coeffs_first)
        r_field = inv.build_R(bundle, e.get("scalar_mode", "full2x2"))
        r_true = np.stack([r_t, r_s])
        diffs = bundle.differences()
        dt = grid.time.dt
        y = np.zeros_like(diffs)
        y[:, 1:-1] = (diffs[:, 2:] - diffs[:, :-2]) / (2.0 * dt)
        ft = lambda k: build_ft(r_field, r_true, ops, k)
        evaluator = lambda wf, s: carleman.evaluate_parabolic_estimate(
            y, ft, wf, s, on_window=True
        )
    reports = carleman.sweep(grid, base, wb["lambda_list"], wb["s_list"], evaluator)
    sweep_path = os.path.join(out_dir, f"{prefix}_carleman_sweep.csv")
    fio.write_sweep_csv(sweep_path, reports)
    n_s = len(wb["s_list"])
    knees = []
    for i, lam in enumerate(wb["lambda_list"]):
        knees.append((lam, carleman.find_knee(reports[i * n_s: (i + 1) * n_s])))
    knee_path = os.path.join(out_dir, f"{prefix}_carleman_knee.csv")
    fio.write_knee_csv(knee_path, knees)
    return [os.path.basename(sweep_path), os.path.basename(knee_path)]


def _reconstruct(cfg, grid, coeffs, amplitude, scenario, out_dir, prefix, tag=""):
    e = cfg.get("experiment", {})
    wb = cfg.get("weights", {})
    result = inv.run_stability_experiment(
        grid, coeffs,
        amplitude=amplitude,
        t0=wb.get("t0", 0.5 * grid.time.t_final),
        delta=wb.get("delta", 0.25 * grid.time.t_final),
        mode=e.get("scalar_mode", "full2x2"),
        tilt=e.get("tilt", 0.1),
        eps_det=wb.get("eps_det", 1e-8),
        scheme=e.get("scheme", "trapezoid"),
        solver_tol=e.get("solver_tol", 1e-11),
        include_x0_term=e.get("include_x0_term", True),
    )
    rec_path = os.path.join(out_dir, f"{prefix}_reconstruction{tag}.csv")
    fio.write_reconstruction_csv(rec_path, grid, result.perturbation, result.truth)
    fio.append_run_log(
        os.path.join(out_dir, f"{prefix}_runlog.csv"),
        {
            "scenario": scenario,
            "mode": e.get("scalar_mode", "full2x2"),
            "amplitude": amplitude,
            "c_emp": result.stability.c_emp,
            "det_margin": result.det_gate.margin,
            "rel_l2_error": result.rel_l2_error,
        },
    )
    return result, [os.path.basename(rec_path), f"{prefix}_runlog.csv"]


def _run_invert(cfg, grid, coeffs, out_dir, prefix, scenario):
    amplitudes = cfg.get("experiment", {}).get("amplitudes", [0.05])
    _, artifacts = _reconstruct(cfg, grid, coeffs, amplitudes[0], scenario, out_dir, prefix)
    return artifacts


def _run_stability(cfg, grid, coeffs, out_dir, prefix, scenario):
    amplitudes = cfg.get("experiment", {}).get("amplitudes", [0.05])
    if all(a == 0.0 for a in amplitudes):
        print("warning: all amplitudes are zero, the stability report degenerates", file=sys.stderr)
    rows = []
    artifacts = set()
    for n, amp in enumerate(amplitudes):
        result, arts = _reconstruct(cfg, grid, coeffs, amp, scenario, out_dir, prefix, tag=f"_{n}")
        artifacts.update(arts)
        rows.append(
            {
                "amplitude": amp,
                "lhs": result.stability.lhs,
                "rhs_interior": result.stability.rhs_interior,
                "rhs_gamma": result.stability.rhs_gamma,
                "rhs_x0": result.stability.rhs_x0,
                "c_emp": result.stability.c_emp,
                "det_margin": result.det_gate.margin,
                "rel_l2_error": result.rel_l2_error,
            }
        )
    path = os.path.join(out_dir, f"{prefix}_stability_sweep.csv")
    fio.write_stability_csv(path, rows)
    artifacts.add(os.path.basename(path))
    return sorted(artifacts)


def run(subcommand: str, config_path: str, out_dir: str, validate_only: bool = False) -> int:
    cfg = load_config(config_path)
    config_dir = os.path.dirname(os.path.abspath(config_path))
    diagnostics = validate(cfg, config_dir)
    if subcommand == "validate" or validate_only:
        if diagnostics:
            print(json.dumps({"error": "invalid-config", "diagnostics": diagnostics}), file=sys.stderr)
            return 1
        print(json.dumps({"status": "ok", "diagnostics": []}))
        return 0
    if diagnostics:
        print(json.dumps({"error": "invalid-config", "diagnostics": diagnostics}), file=sys.stderr)
        return 1

    os.makedirs(out_dir, exist_ok=True)
    grid, coeffs = build_problem(cfg, config_dir)
    prefix = _get(cfg, "output", "prefix", "run")
    scenario = fio.config_sha256(config_path)[:12]
    if subcommand == "forward":
        artifacts = _run_forward(cfg, grid, coeffs, out_dir, prefix)
    elif subcommand == "reduce":
        artifacts = _run_reduce(cfg, grid, coeffs, out_dir, prefix)
    elif subcommand == "carleman":
        artifacts = _run_carleman(cfg, grid, coeffs, out_dir, prefix)
    elif subcommand == "invert":
        artifacts = _run_invert(cfg, grid, coeffs, out_dir, prefix, scenario)
    elif subcommand == "stability":
        artifacts = _run_stability(cfg, grid, coeffs, out_dir, prefix, scenario)
    else:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    fio.write_manifest(out_dir, config_path, subcommand, artifacts)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fracrte",
        description="half-order fractional transport laboratory",
    )
    parser.add_argument(
        "subcommand",
        choices=("forward", "reduce", "carleman", "invert", "stability", "validate"),
    )
    parser.add_argument("--config", required=True, help="path to the YAML run configuration")
    parser.add_argument("--out-dir", default="out", help="artifact directory")
    parser.add_argument(
        "--threads", type=int, default=1,
        help="reserved; desk-scale runs are single threaded and deterministic",
    )
    parser.add_argument("--validate-only", action="store_true")
    args = parser.parse_args(argv)
    try:
        return run(args.subcommand, args.config, args.out_dir, args.validate_only)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    except inv.HypothesisGateError as exc:
        print(json.dumps({"error": "HypothesisGateError", "message": str(exc)}), file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures still produce a machine-readable record
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
