"""Artifact writers: CSV tables, binary snapshots, run log and manifest.

CSV dialect: comma separated, '.' decimal, one header row, LF line endings,
floats rendered by repr (shortest round-trip).  The binary snapshot starts
with the magic bytes FRTE1, then the three dimensions (nx, total velocity
nodes, time step count) as little-endian u64, then the field values of
shape (nt+1, nx, nv_total) as row-major little-endian f8.

Nothing here writes wall-clock content, so identical inputs produce
bit-identical artifacts.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np

MAGIC = b"FRTE1"

__all__ = [
    "write_field_csv",
    "write_field_binary",
    "read_field_binary",
    "write_sweep_csv",
    "write_knee_csv",
    "write_reconstruction_csv",
    "write_stability_csv",
    "write_report_csv",
    "append_run_log",
    "write_manifest",
    "config_sha256",
]


def _fmt(x) -> str:
    return repr(float(x))


def _write_lines(path, lines):
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def write_field_csv(path, field) -> None:
    """Long-format snapshot: one row per (x, v, t) node."""
    grid = field.grid
    lines = ["x,v,t,value"]
    xs = grid.space.nodes
    vs = grid.velocity.nodes
    ts = grid.time.nodes
    vals = field.values
    for k, t in enumerate(ts):
        for i, x in enumerate(xs):
            for j, v in enumerate(vs):
                lines.append(f"{_fmt(x)},{_fmt(v)},{_fmt(t)},{_fmt(vals[k, i, j])}")
    _write_lines(path, lines)


def write_field_binary(path, field) -> None:
    grid = field.grid
    header = MAGIC + struct.pack(
        "<3Q", grid.space.nx, grid.velocity.n_total, grid.time.nt
    )
    payload = np.ascontiguousarray(field.values, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_field_binary(path):
    """Round-trip reader: returns ((nx, nv_total, nt), values array)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise ValueError("not a field snapshot: bad magic bytes")
    nx, nv, nt = struct.unpack_from("<3Q", blob, len(MAGIC))
    values = np.frombuffer(blob, dtype="<f8", offset=len(MAGIC) + 24)
    expected = (nt + 1) * nx * nv
    if values.size != expected:
        raise ValueError(f"snapshot payload has {values.size} values, expected {expected}")
    return (nx, nv, nt), values.reshape(nt + 1, nx, nv).astype(float)


def write_sweep_csv(path, reports) -> None:
    lines = ["lambda,s,lhs,rhs_interior,rhs_boundary,rhs_trace0,c_emp"]
    for r in reports:
        row = r.row()
        lines.append(
            ",".join(
                _fmt(row[k])
                for k in ("lambda", "s", "lhs", "rhs_interior", "rhs_boundary", "rhs_trace0", "c_emp")
            )
        )
    _write_lines(path, lines)


def write_knee_csv(path, knees) -> None:
    """Knee location per lambda; empty cell when the sweep never settles."""
    lines = ["lambda,s_knee"]
    for lam, s_knee in knees:
        lines.append(f"{_fmt(lam)},{'' if s_knee is None else _fmt(s_knee)}")
    _write_lines(path, lines)


def write_reconstruction_csv(path, grid, recovered, truth) -> None:
    """Profiles of the recovered and planted perturbations.

    Absent components (scalar modes) are written as zeros, which matches
    their pinned value in those modes.
    """
    nx, nvt = grid.shape_xv
    zeros = np.zeros((nx, nvt))
    r_t = recovered.r_t if recovered.r_t is not None else zeros
    r_s = recovered.r_s if recovered.r_s is not None else zeros
    t_t = truth.r_t if truth.r_t is not None else zeros
    t_s = truth.r_s if truth.r_s is not None else zeros
    lines = ["x,v,r_t,r_s,r_t_true,r_s_true"]
    for i, x in enumerate(grid.space.nodes):
        for j, v in enumerate(grid.velocity.nodes):
            lines.append(
                f"{_fmt(x)},{_fmt(v)},{_fmt(r_t[i, j])},{_fmt(r_s[i, j])},"
                f"{_fmt(t_t[i, j])},{_fmt(t_s[i, j])}"
            )
    _write_lines(path, lines)


def write_stability_csv(path, rows) -> None:
    header = "amplitude,lhs,rhs_interior,rhs_gamma,rhs_x0,c_emp,det_margin,rel_l2_error"
    lines = [header]
    for row in rows:
        lines.append(",".join(_fmt(row[k]) for k in header.split(",")))
    _write_lines(path, lines)


def write_report_csv(path, pairs) -> None:
    """Generic two-column (quantity, value) report."""
    lines = ["quantity,value"]
    for name, value in pairs:
        lines.append(f"{name},{_fmt(value)}")
    _write_lines(path, lines)


def append_run_log(path, record: dict) -> None:
    header = "scenario,mode,amplitude,c_emp,det_margin,rel_l2_error"
    fresh = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        if fresh:
            fh.write(header + "\n")
        fh.write(
            f"{record['scenario']},{record['mode']},{_fmt(record['amplitude'])},"
            f"{_fmt(record['c_emp'])},{_fmt(record['det_margin'])},"
            f"{_fmt(record['rel_l2_error'])}\n"
        )


def config_sha256(config_path) -> str:
    with open(config_path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write_manifest(out_dir, config_path, subcommand: str, artifacts) -> str:
    manifest = {
        "schema_version": 1,
        "subcommand": subcommand,
        "config_sha256": config_sha256(config_path),
        "artifacts": sorted(artifacts),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
