"""Attenuation, scattering and phase-function data sampled on the grid.

The phase function p(x, v, v') redistributes velocity; it is normalized by
the preset builders so that its velocity integral is 1, which keeps the
scattering term a plain average.  The bound M caps the sup norms of both
coefficients, mirroring the admissible class the estimates assume.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from fracrte.grid import PhaseSpaceGrid

__all__ = [
    "CoefficientSet",
    "constant_sigma",
    "linear_sigma",
    "bump_sigma",
    "normalized_phase",
    "perturbation_bump",
    "perturbed_set",
]


@dataclass
class CoefficientSet:
    """sigma_t, sigma_s on the (x, v) grid and p on the (x, v, v') grid."""

    sigma_t: np.ndarray
    sigma_s: np.ndarray
    p: np.ndarray
    bound_M: float = 10.0
    grid: PhaseSpaceGrid = field(default=None, repr=False)

    def __post_init__(self):
        self.sigma_t = np.asarray(self.sigma_t, dtype=float)
        self.sigma_s = np.asarray(self.sigma_s, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if self.grid is not None:
            nx, nv = self.grid.shape_xv
            if self.sigma_t.shape != (nx, nv) or self.sigma_s.shape != (nx, nv):
                raise ValueError("sigma arrays must have shape (nx, 2nv)")
            if self.p.shape != (nx, nv, nv):
                raise ValueError("p must have shape (nx, 2nv, 2nv)")
        for name, arr in (("sigma_t", self.sigma_t), ("sigma_s", self.sigma_s), ("p", self.p)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        if np.any(self.p < 0):
            raise ValueError("phase function must be non-negative")
        if np.min(self.p) == 0.0:
            # strict positivity is the standing assumption; a vanishing phase
            # function is allowed through so the determinant gate downstream
            # can report the resulting degeneracy explicitly
            warnings.warn("phase function is not strictly positive", stacklevel=2)
        if self.bound_M <= 0:
            raise ValueError("bound_M must be positive")
        sup = max(np.max(np.abs(self.sigma_t)), np.max(np.abs(self.sigma_s)))
        if sup > self.bound_M:
            raise ValueError(
                f"coefficient sup norm {sup:.3g} exceeds the admissible bound M={self.bound_M}"
            )


def _xv_from_profile(grid: PhaseSpaceGrid, profile_x, tilt: float = 0.0) -> np.ndarray:
    """Broadcast an x-profile over velocities, optionally tilted in v/v1."""
    x = grid.space.nodes
    v = grid.velocity.nodes
    base = np.asarray(profile_x(x), dtype=float)[:, None]
    return base * (1.0 + tilt * v[None, :] / grid.velocity.v1)


def constant_sigma(grid: PhaseSpaceGrid, value: float) -> np.ndarray:
    return np.full(grid.shape_xv, float(value))


def linear_sigma(grid: PhaseSpaceGrid, value0: float, value1: float, tilt: float = 0.0) -> np.ndarray:
    """Profile rising linearly from value0 at x=0 to value1 at x=ell."""
    ell = grid.space.ell
    return _xv_from_profile(grid, lambda x: value0 + (value1 - value0) * x / ell, tilt)


def bump_sigma(grid: PhaseSpaceGrid, base: float, amplitude: float, tilt: float = 0.0) -> np.ndarray:
    """Base level plus a smooth interior bump vanishing at both faces."""
    ell = grid.space.ell
    return _xv_from_profile(
        grid, lambda x: base + amplitude * (x / ell) ** 2 * (1.0 - x / ell) ** 2 * 16.0, tilt
    )


def normalized_phase(grid: PhaseSpaceGrid, modulation: float = 0.0) -> np.ndarray:
    """Phase function with unit velocity integral.

    ``modulation`` adds a small even-in-v' structure while preserving the
    normalization, so isotropic scattering is the modulation=0 case.
    """
    nx, nv = grid.shape_xv
    v = grid.velocity.nodes
    w = grid.velocity.weights
    shape = 1.0 + modulation * (v / grid.velocity.v1) ** 2
    shape = shape / float(w @ shape)
    return np.broadcast_to(shape[None, None, :], (nx, nv, nv)).copy()


def perturbation_bump(
    grid: PhaseSpaceGrid, amplitude: float, tilt: float = 0.1
) -> np.ndarray:
    """Smooth perturbation profile vanishing to second order at x=0.

    The x^2 (ell-x)^2 shape keeps the value and slope zero at the left face,
    matching the hypothesis that both coefficient sets agree there.
    """
    ell = grid.space.ell
    return _xv_from_profile(
        grid, lambda x: amplitude * 16.0 * (x / ell) ** 2 * (1.0 - x / ell) ** 2, tilt
    )


def perturbed_set(
    reference: CoefficientSet, r_t: np.ndarray, r_s: np.ndarray
) -> CoefficientSet:
    """Coefficient set shifted by a perturbation pair (same p, same bound)."""
    return CoefficientSet(
        sigma_t=reference.sigma_t + r_t,
        sigma_s=reference.sigma_s + r_s,
        p=reference.p,
        bound_M=reference.bound_M,
        grid=reference.grid,
    )
