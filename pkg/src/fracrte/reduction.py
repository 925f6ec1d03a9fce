"""Operators of the first-order-in-time reformulation.

Applying the half-derivative to the transport system once more turns it into

    du/dt - v^2 d2u/dx2 - L1 u - integral of K u  =  f,

where L1 collects the advection/attenuation cross terms, the kernel K the
scattering cross terms (including a double-scattering kernel), and f the
source induced by a coefficient perturbation pair through the measurement
matrix R.  Everything here works on discrete slices; spatial derivatives of
tabulated coefficients are formed once by central differences.

The 1/sqrt(t) factor in f is singular at t=0, so the source and the residual
checks are only evaluated at strictly positive times (t_index >= 1, and in
practice on a window well inside the time interval).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from fracrte.coefficients import CoefficientSet
from fracrte.fraccalc import GAMMA_HALF
from fracrte.grid import PhaseSpaceGrid, d1x, d2x

__all__ = [
    "ReducedOperators",
    "apply_L1",
    "apply_K",
    "hat_transform",
    "build_f",
    "build_ft",
    "ResidualReport",
    "residual_reduced",
]


@dataclass
class ReducedOperators:
    """Coefficient set plus the precomputed arrays the reduced system needs."""

    grid: PhaseSpaceGrid
    coeffs: CoefficientSet
    dsigma_t: np.ndarray = field(init=False, repr=False)
    dsigsp: np.ndarray = field(init=False, repr=False)
    double_kernel: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        dx = self.grid.space.dx
        self.dsigma_t = d1x(self.coeffs.sigma_t, dx)
        sigsp = self.coeffs.sigma_s[:, :, None] * self.coeffs.p
        self.dsigsp = d1x(sigsp, dx)
        w = self.grid.velocity.weights
        # inner scattering loop: integral over v'' of sigma_s p(v,v'') p(v'',v')
        self.double_kernel = np.einsum(
            "w,xw,xvw,xwu->xvu", w, self.coeffs.sigma_s, self.coeffs.p, self.coeffs.p
        )


def _check_slice(ops: ReducedOperators, field_slice: np.ndarray) -> np.ndarray:
    field_slice = np.asarray(field_slice, dtype=float)
    if field_slice.shape != ops.grid.shape_xv:
        raise ValueError(
            f"expected slice of shape {ops.grid.shape_xv}, got {field_slice.shape}"
        )
    return field_slice


def apply_L1(ops: ReducedOperators, field_slice: np.ndarray) -> np.ndarray:
    """2 v sigma_t du/dx + (v dsigma_t/dx + sigma_t^2) u on an (x, v) slice."""
    u = _check_slice(ops, field_slice)
    v = ops.grid.velocity.nodes[None, :]
    du = d1x(u, ops.grid.space.dx)
    st = ops.coeffs.sigma_t
    return 2.0 * v * st * du + (v * ops.dsigma_t + st**2) * u


def apply_K(ops: ReducedOperators, field_slice: np.ndarray) -> np.ndarray:
    """Velocity integral of the scattering kernel applied to a slice.

    Three contributions per (x, v): the derivative of sigma_s p, the mixed
    advection/attenuation term acting on the integrand, and the
    double-scattering kernel.
    """
    u = _check_slice(ops, field_slice)
    grid = ops.grid
    v = grid.velocity.nodes
    w = grid.velocity.weights
    du = d1x(u, grid.space.dx)
    uw = u * w[None, :]
    duw = du * w[None, :]
    st = ops.coeffs.sigma_t
    sp = ops.coeffs.sigma_s[:, :, None] * ops.coeffs.p

    term1 = -v[None, :] * np.einsum("xvw,xw->xv", ops.dsigsp, uw)
    sum_vw = np.einsum("xvw,xw->xv", sp, duw)  # integral of p sigma_s du'
    sum_vpw = np.einsum("xvw,w,xw->xv", sp, v, duw)  # same with extra v'
    sum_st = np.einsum("xvw,xw->xv", sp, st * uw)  # integral weighted by sigma_t(v')
    sum_u = np.einsum("xvw,xw->xv", sp, uw)
    term2 = -(v[None, :] * sum_vw + sum_vpw + st * sum_u + sum_st)
    term3 = ops.coeffs.sigma_s * np.einsum("xvw,xw->xv", ops.double_kernel, uw)
    return term1 + term2 + term3


def hat_transform(u_pair: np.ndarray, r_matrix_at0: np.ndarray, r_vec: np.ndarray,
                  times: np.ndarray) -> np.ndarray:
    """Shifted unknown u - (2 sqrt(t)/Gamma(1/2)) R(.,.,0) r.

    The subtraction removes the leading sqrt(t) behaviour of the difference
    field, so the result vanishes identically at t=0 and its half-derivative
    starts from zero as well (the series convention pins the node value).
    """
    u_pair = np.asarray(u_pair, dtype=float)
    shift = np.einsum("xvij,jxv->ixv", np.asarray(r_matrix_at0, float), np.asarray(r_vec, float))
    factor = 2.0 * np.sqrt(np.asarray(times, float)) / GAMMA_HALF
    return u_pair - factor[None, :, None, None] * shift[:, None, :, :]


def _bracket(ops: ReducedOperators, r_field, t_index: int) -> np.ndarray:
    """Matrix factor v dR/dx + sigma_t R - D^{1/2}R - R(0)/(Gamma(1/2) sqrt(t))."""
    grid = ops.grid
    t = t_index * grid.time.dt
    v = grid.velocity.nodes[None, :, None, None]
    st = ops.coeffs.sigma_t[:, :, None, None]
    return (
        v * r_field.ddx_at(t_index)
        + st * r_field.at(t_index)
        - r_field.caputo_at(t_index)
        - r_field.at0() / (GAMMA_HALF * math.sqrt(t))
    )


def build_f(r_field, r_vec: np.ndarray, ops: ReducedOperators, t_index: int) -> np.ndarray:
    """Perturbation-induced source of the reduced system at one time node.

    ``r_field`` provides the measurement matrix history (values, x and
    half-order time derivatives); ``r_vec`` has shape (m, nx, 2nv).  The
    result is linear in ``r_vec`` and undefined at t_index 0.
    """
    if t_index < 1:
        raise ValueError("the reduced source is singular at t=0; need t_index >= 1")
    grid = ops.grid
    r_vec = np.asarray(r_vec, dtype=float)
    v = grid.velocity.nodes
    dr_dx = d1x(r_vec, grid.space.dx, axis=1)
    rk = r_field.at(t_index)
    out = -v[None, None, :] * np.einsum("xvij,jxv->ixv", rk, dr_dx)
    out -= np.einsum("xvij,jxv->ixv", _bracket(ops, r_field, t_index), r_vec)
    pw = ops.coeffs.p * grid.velocity.weights[None, None, :]
    out += ops.coeffs.sigma_s[None, :, :] * np.einsum(
        "xvw,xwij,jxw->ixv", pw, rk, r_vec
    )
    return out


def build_ft(r_field, r_vec: np.ndarray, ops: ReducedOperators, t_index: int) -> np.ndarray:
    """Time derivative of the reduced source at one node.

    Differentiates every R-dependent factor by centered differences (one
    sided at the last node) and the 1/sqrt(t) factor analytically, which
    flips its sign and brings in the 1/(2 t sqrt(t)) decay.
    """
    if t_index < 1:
        raise ValueError("need t_index >= 1")
    grid = ops.grid
    r_vec = np.asarray(r_vec, dtype=float)
    t = t_index * grid.time.dt
    v = grid.velocity.nodes
    dr_dx = d1x(r_vec, grid.space.dx, axis=1)

    rdot = r_field.time_derivative_at(t_index)
    rdot_dx = d1x(rdot, grid.space.dx, axis=0)
    capdot = r_field.caputo_time_derivative_at(t_index)
    st = ops.coeffs.sigma_t[:, :, None, None]
    bracket = (
        v[None, :, None, None] * rdot_dx
        + st * rdot
        - capdot
        + r_field.at0() / (2.0 * GAMMA_HALF * t * math.sqrt(t))
    )
    out = -v[None, None, :] * np.einsum("xvij,jxv->ixv", rdot, dr_dx)
    out -= np.einsum("xvij,jxv->ixv", bracket, r_vec)
    pw = ops.coeffs.p * grid.velocity.weights[None, None, :]
    out += ops.coeffs.sigma_s[None, :, :] * np.einsum(
        "xvw,xwij,jxw->ixv", pw, rdot, r_vec
    )
    return out


@dataclass(frozen=True)
class ResidualReport:
    """Max-norm defect of the reduced system over a time window."""

    max_defect: float
    ref_scale: float
    window: tuple[int, int]

    @property
    def relative(self) -> float:
        return self.max_defect / self.ref_scale if self.ref_scale > 0 else 0.0


def residual_reduced(
    u_pair: np.ndarray,
    ops: ReducedOperators,
    f_values,
    window: tuple[int, int],
) -> ResidualReport:
    """Defect of the reduced system on interior nodes of a time window.

    ``u_pair`` has shape (m, nt+1, nx, 2nv); ``f_values`` is either an array
    (m, nt+1, nx, 2nv) or a callable mapping a time index to an
    (m, nx, 2nv) slice.  Time derivative by backward differences, space by
    the second-order central stencil; the spatial endpoints are excluded.
    The reference scale is the max norm of du/dt on the same nodes.
    """
    u_pair = np.asarray(u_pair, dtype=float)
    grid = ops.grid
    dt = grid.time.dt
    v2 = grid.velocity.nodes[None, :] ** 2
    k_lo, k_hi = window
    if not (1 <= k_lo <= k_hi <= grid.time.nt):
        raise ValueError(f"window {window} outside 1..nt")
    worst = 0.0
    scale = 0.0
    for k in range(k_lo, k_hi + 1):
        fk = f_values(k) if callable(f_values) else f_values[:, k]
        for j in range(u_pair.shape[0]):
            uk = u_pair[j, k]
            dudt = (uk - u_pair[j, k - 1]) / dt
            defect = (
                dudt
                - v2 * d2x(uk, grid.space.dx)
                - apply_L1(ops, uk)
                - apply_K(ops, uk)
                - fk[j]
            )
            worst = max(worst, float(np.max(np.abs(defect[1:-1]))))
            scale = max(scale, float(np.max(np.abs(dudt[1:-1]))))
    return ResidualReport(max_defect=worst, ref_scale=scale, window=window)
