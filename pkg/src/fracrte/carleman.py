"""Weight functions and empirical evaluation of the energy inequalities.

The weights are built from a decreasing profile d(x) > 0,

    alpha = (exp(lam d) - exp(2 lam max d)) / (t (T - t)),
    phi   =  exp(lam d) / (t (T - t)),

so alpha is strictly negative inside the cylinder and exp(2 s alpha)
vanishes at both time endpoints.  A window variant replaces t (T - t) by
(t - t0 + delta)(t0 + delta - t) on an interior observation window.

Because exp(2 s alpha) underflows long before the interesting parameter
range is reached, every quadrature works with the shifted weight
exp(2 s (alpha - alpha*)), alpha* the largest alpha over the integration
nodes.  Both sides of an inequality are shifted identically, so the
empirical constants are unchanged; reports carry the log-shift so absolute
values can be restored offline.

The inequalities come with unspecified constants, including an exp(C s)
factor on the unweighted boundary traces.  The evaluator replaces that
factor by the largest weight the conjugated boundary terms actually carry
(a polynomial in s, lam, phi times the shifted exponential), which is the
sharpest implementable stand-in; all raw terms are reported so any other
convention can be fitted offline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from fracrte.grid import PhaseSpaceGrid, d1x, d2x

__all__ = [
    "WeightParams",
    "WeightField",
    "CarlemanReport",
    "build_weights",
    "conjugate",
    "split_operator",
    "apply_conjugated_transport",
    "conjugation_defect",
    "evaluate_parabolic_estimate",
    "evaluate_stationary_estimate",
    "sweep",
    "find_knee",
]


@dataclass(frozen=True)
class WeightParams:
    """Sharpness lam, parameter s, observation time t0 and half-window delta.

    ``d_spec`` selects the profile: "affine" uses d(x) = ell - x + ell/10,
    which is positive with slope -1; a custom profile may be supplied as a
    (d, d', d'') triple of arrays on the x nodes.
    """

    lam: float
    s: float
    t0: float
    delta: float
    d_spec: object = "affine"

    def validate(self, grid: PhaseSpaceGrid):
        if self.lam <= 0 or self.s <= 0:
            raise ValueError("lam and s must be positive")
        t_final = grid.time.t_final
        if not (0.0 < self.t0 < t_final):
            raise ValueError("t0 must lie inside (0, T)")
        if not (0.0 < self.delta < min(self.t0, t_final - self.t0)):
            raise ValueError("window must satisfy 0 < delta < min(t0, T - t0)")


class WeightField:
    """Tabulated weights for one lam on the full cylinder and the window."""

    def __init__(self, grid: PhaseSpaceGrid, params: WeightParams):
        params.validate(grid)
        self.grid = grid
        self.params = params
        lam = params.lam
        x = grid.space.nodes
        ell = grid.space.ell
        if params.d_spec == "affine":
            self.d = ell - x + 0.1 * ell
            self.ddx_d = np.full_like(x, -1.0)
            self.d2x_d = np.zeros_like(x)
        else:
            self.d, self.ddx_d, self.d2x_d = (np.asarray(a, float) for a in params.d_spec)
            if self.d.shape != x.shape:
                raise ValueError("custom d profile must be tabulated on the x nodes")
            if np.any(self.d[1:-1] <= 0) or np.any(self.ddx_d >= 0):
                raise ValueError("d must be positive inside the slab with d' < 0")
        self.d_norm = float(np.max(np.abs(self.d)))
        self.eld = np.exp(lam * self.d)
        self.offset = math.exp(2.0 * lam * self.d_norm)

        t = grid.time.nodes
        t_final = grid.time.t_final
        self.interior = np.arange(1, grid.time.nt)
        denom = t[self.interior] * (t_final - t[self.interior])
        self.alpha = (self.eld[None, :] - self.offset) / denom[:, None]
        self.phi = self.eld[None, :] / denom[:, None]
        # d alpha/dt = -alpha (T - 2t)/(t(T-t))
        self.dalpha_dt = -self.alpha * ((t_final - 2.0 * t[self.interior]) / denom)[:, None]

        a = params.t0 - params.delta
        b = params.t0 + params.delta
        win = np.nonzero((t > a + 1e-12 * t_final) & (t < b - 1e-12 * t_final))[0]
        win = win[(win >= 1) & (win <= grid.time.nt - 1)]
        if win.size < 3:
            raise ValueError("the observation window must contain at least 3 nodes")
        self.window = win
        wden = (t[win] - a) * (b - t[win])
        self.alpha_win = (self.eld[None, :] - self.offset) / wden[:, None]
        self.phi_win = self.eld[None, :] / wden[:, None]
        self.dalpha_win = -self.alpha_win * (2.0 * (params.t0 - t[win]) / wden)[:, None]

        k0 = grid.time.index_of(params.t0)
        self.t0_index = k0
        self.alpha_t0 = (self.eld - self.offset) / (params.delta**2)
        self.phi_t0 = self.eld / (params.delta**2)

    # -- shifted exponentials ----------------------------------------------
    def shifted_exp(self, s: float, which: str):
        """Weight exp(2 s (alpha - alpha*)) and the log-shift 2 s alpha*."""
        alpha = {"full": self.alpha, "window": self.alpha_win, "t0": self.alpha_t0}[which]
        amax = float(np.max(alpha))
        return np.exp(2.0 * s * (alpha - amax)), 2.0 * s * amax


def build_weights(grid: PhaseSpaceGrid, params: WeightParams) -> WeightField:
    return WeightField(grid, params)


def conjugate(u_values: np.ndarray, wf: WeightField, s: float) -> np.ndarray:
    """Pointwise product exp(s alpha) u; exact zeros at the time endpoints."""
    u_values = np.asarray(u_values, dtype=float)
    z = np.zeros_like(u_values)
    z[wf.interior] = np.exp(s * wf.alpha)[..., None] * u_values[wf.interior]
    return z


def split_operator(z: np.ndarray, wf: WeightField, s: float):
    """The three conjugated-operator parts applied to z with grid stencils.

    Returns (P1 z, P2 z, R0 z), populated on interior time nodes (edge rows
    zero).  Their combination P1 + P2 - R0 reproduces the conjugated
    transport operator up to differencing error.
    """
    grid = wf.grid
    lam = wf.params.lam
    z = np.asarray(z, dtype=float)
    dt = grid.time.dt
    dx = grid.space.dx
    v2 = (grid.velocity.nodes**2)[None, None, :]
    ki = wf.interior

    zt = (z[ki + 1] - z[ki - 1]) / (2.0 * dt)
    zx = d1x(z[ki], dx, axis=1)
    zxx = d2x(z[ki], dx, axis=1)
    phi = wf.phi[..., None]
    dal = wf.dalpha_dt[..., None]
    dd = wf.ddx_d[None, :, None]
    zi = z[ki]

    p1 = np.zeros_like(z)
    p2 = np.zeros_like(z)
    r0 = np.zeros_like(z)
    p1[ki] = -v2 * zxx - s**2 * lam**2 * phi**2 * dd**2 * v2 * zi - s * dal * zi
    p2[ki] = zt + 2.0 * s * lam * phi * dd * v2 * zx
    r0[ki] = -s * lam**2 * phi * dd**2 * v2 * zi - s * lam * phi * wf.d2x_d[None, :, None] * v2 * zi
    return p1, p2, r0


def apply_conjugated_transport(u_values: np.ndarray, wf: WeightField, s: float) -> np.ndarray:
    """exp(s alpha) (du/dt - v^2 d2u/dx2) with the same stencils as the split."""
    grid = wf.grid
    u_values = np.asarray(u_values, dtype=float)
    dt = grid.time.dt
    v2 = (grid.velocity.nodes**2)[None, None, :]
    ki = wf.interior
    ut = (u_values[ki + 1] - u_values[ki - 1]) / (2.0 * dt)
    uxx = d2x(u_values[ki], grid.space.dx, axis=1)
    out = np.zeros_like(u_values)
    out[ki] = np.exp(s * wf.alpha)[..., None] * (ut - v2 * uxx)
    return out


def conjugation_defect(u_values: np.ndarray, wf: WeightField, s: float):
    """Relative defect of the operator split against the conjugation oracle.

    Compares (P1 + P2 - R0) exp(s alpha) u with exp(s alpha) L0 u on
    interior nodes (x endpoints excluded), in the plain L2 grid norm.
    """
    z = conjugate(u_values, wf, s)
    p1, p2, r0 = split_operator(z, wf, s)
    direct = apply_conjugated_transport(u_values, wf, s)
    ki = wf.interior
    diff = (p1 + p2 - r0 - direct)[ki][:, 1:-1, :]
    ref = direct[ki][:, 1:-1, :]
    return float(np.sqrt(np.sum(diff**2))), float(np.sqrt(np.sum(ref**2)))


@dataclass(frozen=True)
class CarlemanReport:
    """One evaluation of an estimate: both sides and the empirical constant."""

    lam: float
    s: float
    lhs: float
    rhs_interior: float
    rhs_boundary: float
    rhs_trace0: float
    log_shift: float
    boundary_factor: float = 0.0

    @property
    def rhs_total(self) -> float:
        return self.rhs_interior + self.rhs_boundary + self.rhs_trace0

    @property
    def c_emp(self) -> float:
        if self.lhs == 0.0:
            return 0.0
        if self.rhs_total == 0.0:
            return math.inf
        return self.lhs / self.rhs_total

    def row(self) -> dict:
        return {
            "lambda": self.lam,
            "s": self.s,
            "lhs": self.lhs,
            "rhs_interior": self.rhs_interior,
            "rhs_boundary": self.rhs_boundary,
            "rhs_trace0": self.rhs_trace0,
            "c_emp": self.c_emp,
        }


def _as_components(values: np.ndarray, grid: PhaseSpaceGrid) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape == grid.shape_txv:
        return values[None]
    if values.ndim == 4 and values.shape[1:] == grid.shape_txv:
        return values
    raise ValueError("expected (nt+1, nx, 2nv) or (m, nt+1, nx, 2nv) values")


def evaluate_parabolic_estimate(
    u_values: np.ndarray,
    f_values,
    wf: WeightField,
    s: float,
    on_window: bool = True,
) -> CarlemanReport:
    """Quadrature of every term of the evolution estimate.

    ``u_values`` may carry several components (summed); ``f_values`` is an
    array of matching shape or a callable mapping a time index to an
    (m, nx, 2nv) slice.  ``on_window`` selects the observation-window
    weights, otherwise the full cylinder is used.
    """
    if s <= 0:
        raise ValueError("s must be positive")
    grid = wf.grid
    lam = wf.params.lam
    comps = _as_components(u_values, grid)
    m = comps.shape[0]
    ki = wf.window if on_window else wf.interior
    phi = wf.phi_win if on_window else wf.phi
    dal = wf.dalpha_win if on_window else wf.dalpha_dt
    weight, log_shift = wf.shifted_exp(s, "window" if on_window else "full")

    dt = grid.time.dt
    dx = grid.space.dx
    xw = grid.x_weights()
    vw = grid.velocity.weights
    v1 = grid.velocity.v1

    a_t = np.zeros((ki.size, grid.space.nx))
    a_x = np.zeros_like(a_t)
    a_0 = np.zeros_like(a_t)
    f_sq = np.zeros_like(a_t)
    traces = 0.0
    trace0 = 0.0
    for j in range(m):
        u = comps[j]
        ut = (u[ki + 1] - u[ki - 1]) / (2.0 * dt)
        ux = d1x(u[ki], dx, axis=1)
        a_t += ut**2 @ vw
        a_x += ux**2 @ vw
        a_0 += u[ki] ** 2 @ vw
        if callable(f_values):
            fj = np.stack([np.asarray(f_values(int(k)))[j] for k in ki])
        else:
            fj = _as_components(f_values, grid)[j][ki]
        f_sq += fj**2 @ vw
        for n, k in enumerate(ki):
            h = u[k] ** 2 + ut[n] ** 2 + ux[n] ** 2
            traces += dt * grid.trace_quadrature(grid.gamma_plus, h)
            trace0 += dt * float(vw @ (ux[n, 0] ** 2))

    lhs_density = (
        a_t / (s * phi) + s * lam**2 * phi * a_x + s**3 * lam**4 * phi**3 * a_0
    )
    lhs = float(np.einsum("kx,kx,x->", lhs_density, weight, xw) * dt)
    rhs_interior = float(np.einsum("kx,kx,x->", f_sq, weight, xw) * dt)

    dd_abs = np.abs(wf.ddx_d[[0, -1]])[None, :]
    phi_b = phi[:, [0, -1]]
    w_b = weight[:, [0, -1]]
    dal_b = np.abs(dal[:, [0, -1]])
    bf = w_b * v1**2 * (
        1.0
        + s * lam * phi_b * dd_abs * v1**2
        + s**2 * lam * phi_b * dd_abs * dal_b
        + s**3 * lam**3 * phi_b**3 * dd_abs**3 * v1**2
    )
    boundary_factor = float(np.max(bf))
    return CarlemanReport(
        lam=lam,
        s=s,
        lhs=lhs,
        rhs_interior=rhs_interior,
        rhs_boundary=boundary_factor * traces,
        rhs_trace0=boundary_factor * trace0,
        log_shift=log_shift,
        boundary_factor=boundary_factor,
    )


def evaluate_stationary_estimate(
    w_slice: np.ndarray,
    b: np.ndarray | None,
    c: np.ndarray | None,
    wf: WeightField,
    s: float,
    rhs_slice: np.ndarray | None = None,
) -> CarlemanReport:
    """Both sides of the stationary estimate with the t0 weight row.

    ``w_slice`` must vanish at x=0.  The right-hand side is either supplied
    or assembled discretely as dw/dx + b w + integral of c(x,v,v') w(x,v').
    """
    if s <= 0:
        raise ValueError("s must be positive")
    grid = wf.grid
    w_slice = np.asarray(w_slice, dtype=float)
    if w_slice.shape != grid.shape_xv:
        raise ValueError(f"w must have shape {grid.shape_xv}")
    if np.max(np.abs(w_slice[0])) != 0.0:
        raise ValueError("the stationary estimate requires w(0, v) = 0")
    dwdx = d1x(w_slice, grid.space.dx)
    if rhs_slice is None:
        rhs_slice = dwdx.copy()
        if b is not None:
            rhs_slice += np.asarray(b, float) * w_slice
        if c is not None:
            cw = np.einsum(
                "xvw,w,xw->xv", np.asarray(c, float), grid.velocity.weights, w_slice
            )
            rhs_slice += cw
    weight, log_shift = wf.shifted_exp(s, "t0")
    xw = grid.x_weights()
    vw = grid.velocity.weights
    lhs = float(np.einsum("xv,v,x,x->", dwdx**2 + s**2 * w_slice**2, vw, weight, xw))
    rhs = float(np.einsum("xv,v,x,x->", np.asarray(rhs_slice, float) ** 2, vw, weight, xw))
    return CarlemanReport(
        lam=wf.params.lam,
        s=s,
        lhs=lhs,
        rhs_interior=rhs,
        rhs_boundary=0.0,
        rhs_trace0=0.0,
        log_shift=log_shift,
    )


def sweep(grid: PhaseSpaceGrid, base: WeightParams, lam_list, s_list, evaluator):
    """Evaluate an estimate over the (lam, s) lattice.

    ``evaluator(wf, s)`` must return a CarlemanReport; the sweep rebuilds
    the weight field once per lam.  Raises on an empty lattice.
    """
    lam_list = list(lam_list)
    s_list = list(s_list)
    if not lam_list or not s_list:
        raise ValueError("the (s, lam) lattice must not be empty")
    reports = []
    for lam in lam_list:
        wf = build_weights(
            grid,
            WeightParams(lam=lam, s=s_list[0], t0=base.t0, delta=base.delta, d_spec=base.d_spec),
        )
        for s in s_list:
            reports.append(evaluator(wf, s))
    return reports


def find_knee(reports) -> float | None:
    """Smallest s from which c_emp is non-increasing to the end of the sweep.

    ``reports`` must share one lam and be ordered by increasing s.
    """
    cs = [r.c_emp for r in reports]
    ss = [r.s for r in reports]
    for i in range(len(cs)):
        tail = cs[i:]
        if all(tail[n + 1] <= tail[n] * (1.0 + 1e-12) for n in range(len(tail) - 1)):
            return ss[i]
    return None
