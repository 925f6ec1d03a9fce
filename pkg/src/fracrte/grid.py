"""Discretization of the slab phase space.

The spatial domain is the interval (0, ell), the velocity set is the two
symmetric branches {v : v0 <= |v| <= v1}, and time runs over (0, t_final).
Velocity nodes carry quadrature weights (Gauss-Legendre per branch by
default, trapezoid optionally).  The outward normal is -1 at x=0 and +1 at
x=ell; the outflow set gamma_plus collects (0, v<0) and (ell, v>0), the
inflow set gamma_minus the two complementary half-branches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SpatialGrid",
    "VelocityGrid",
    "TimeGrid",
    "BoundarySet",
    "PhaseSpaceGrid",
    "build_grid",
    "d1x",
    "d2x",
]


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform nodes on [0, ell], endpoints included."""

    ell: float
    nx: int
    nodes: np.ndarray = field(repr=False)

    @property
    def dx(self) -> float:
        return self.ell / (self.nx - 1)


@dataclass(frozen=True)
class VelocityGrid:
    """Two mirrored velocity branches with positive quadrature weights.

    ``nodes`` is ascending: the negative branch [-v1, -v0] first, then the
    positive branch [v0, v1]; ``nv`` counts nodes per branch.  The weights of
    mirrored nodes are equal, so the quadrature of an odd function cancels
    exactly up to round-off.
    """

    v0: float
    v1: float
    nv: int
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    scheme: str = "gauss"

    @property
    def n_total(self) -> int:
        return 2 * self.nv

    @property
    def measure(self) -> float:
        """Total measure of the velocity set, 2 (v1 - v0)."""
        return 2.0 * (self.v1 - self.v0)

    @property
    def negative(self) -> np.ndarray:
        """Indices of the negative branch."""
        return np.arange(self.nv)

    @property
    def positive(self) -> np.ndarray:
        """Indices of the positive branch."""
        return np.arange(self.nv, 2 * self.nv)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid with nt steps on [0, t_final]."""

    t_final: float
    nt: int

    @property
    def dt(self) -> float:
        return self.t_final / self.nt

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.t_final, self.nt + 1)

    def index_of(self, t: float) -> int:
        """Grid index of a time that must sit on a node (1e-9 dt tolerance)."""
        k = int(round(t / self.dt))
        if not (0 <= k <= self.nt) or abs(k * self.dt - t) > 1e-9 * self.dt:
            raise ValueError(f"time {t} is not a node of the grid (dt={self.dt})")
        return k


@dataclass(frozen=True)
class BoundarySet:
    """Half-range boundary set at one slab face.

    ``side`` is 0 for x=0 or the last index for x=ell, ``sign`` the outward
    normal there, and ``velocities`` the indices of the member half-branch.
    """

    side: int
    sign: int
    velocities: np.ndarray = field(repr=False)


class PhaseSpaceGrid:
    """Container tying the three one-dimensional grids together.

    Immutable after construction; shared read-only by the solver and all
    evaluation routines.
    """

    def __init__(self, space: SpatialGrid, velocity: VelocityGrid, time: TimeGrid):
        self.space = space
        self.velocity = velocity
        self.time = time
        neg = velocity.negative
        pos = velocity.positive
        last = space.nx - 1
        # outflow: velocities leaving the slab through each face
        self.gamma_plus = (
            BoundarySet(side=0, sign=-1, velocities=neg),
            BoundarySet(side=last, sign=+1, velocities=pos),
        )
        # inflow: velocities entering the slab
        self.gamma_minus = (
            BoundarySet(side=0, sign=-1, velocities=pos),
            BoundarySet(side=last, sign=+1, velocities=neg),
        )

    # -- shapes -----------------------------------------------------------
    @property
    def shape_xv(self):
        return (self.space.nx, self.velocity.n_total)

    @property
    def shape_txv(self):
        return (self.time.nt + 1, self.space.nx, self.velocity.n_total)

    def x_weights(self) -> np.ndarray:
        """Trapezoid weights over the spatial nodes."""
        w = np.full(self.space.nx, self.space.dx)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    # -- quadratures ------------------------------------------------------
    def integrate_velocity(self, samples: np.ndarray, axis: int = -1) -> np.ndarray:
        """Quadrature of per-velocity samples over the whole velocity set.

        ``samples`` must have length 2*nv along ``axis``.  Exact for
        polynomials up to the branch quadrature order.
        """
        samples = np.asarray(samples)
        if samples.shape[axis] != self.velocity.n_total:
            raise ValueError(
                f"samples have {samples.shape[axis]} velocity entries, "
                f"grid has {self.velocity.n_total}"
            )
        return np.tensordot(samples, self.velocity.weights, axes=([axis], [0]))

    def integrate_xv(self, values: np.ndarray) -> float:
        """Quadrature over x and v of a (nx, 2nv) slice: trapezoid x velocity."""
        if values.shape != self.shape_xv:
            raise ValueError(f"expected slice of shape {self.shape_xv}, got {values.shape}")
        per_x = self.integrate_velocity(values, axis=1)
        return float(per_x @ self.x_weights())

    def trace_quadrature(self, boundary, values_at_sides: np.ndarray) -> float:
        """Integral over a boundary pair (gamma_plus or gamma_minus).

        ``values_at_sides`` has shape (nx, 2nv) or (2, 2nv) where only the
        rows at the member sides are read; the surface measure at each face
        is a point mass.
        """
        total = 0.0
        for bset in boundary:
            row = values_at_sides[0 if bset.side == 0 else -1]
            w = self.velocity.weights[bset.velocities]
            total += float(w @ row[bset.velocities])
        return total

    # -- discrete norms ----------------------------------------------------
    def discrete_norm(self, field_slice: np.ndarray, norm_kind: str) -> float:
        """Squared discrete Sobolev norm of an (nx, 2nv) slice.

        Supported kinds: ``"l2"`` for the plain phase-space norm,
        ``"h1"`` adds the first x-derivative, ``"h2"`` the second.
        x-derivatives use central differences, one-sided at the endpoints.
        """
        field_slice = np.asarray(field_slice, dtype=float)
        if field_slice.shape != self.shape_xv:
            raise ValueError(
                f"expected slice of shape {self.shape_xv}, got {field_slice.shape}"
            )
        kind = norm_kind.lower()
        total = self.integrate_xv(field_slice**2)
        if kind in ("h1", "h2"):
            du = d1x(field_slice, self.space.dx)
            total += self.integrate_xv(du**2)
        if kind == "h2":
            d2u = d2x(field_slice, self.space.dx)
            total += self.integrate_xv(d2u**2)
        if kind not in ("l2", "h1", "h2"):
            raise ValueError(f"unknown norm kind {norm_kind!r}; use l2, h1 or h2")
        return float(total)


def _gauss_branch(v0: float, v1: float, nv: int):
    xi, w = np.polynomial.legendre.leggauss(nv)
    nodes = 0.5 * (v0 + v1) + 0.5 * (v1 - v0) * xi
    weights = 0.5 * (v1 - v0) * w
    return nodes, weights


def _trapezoid_branch(v0: float, v1: float, nv: int):
    nodes = np.linspace(v0, v1, nv)
    weights = np.full(nv, (v1 - v0) / (nv - 1))
    weights[0] *= 0.5
    weights[-1] *= 0.5
    return nodes, weights


def build_grid(
    ell: float,
    nx: int,
    v0: float,
    v1: float,
    nv: int,
    t_final: float,
    nt: int,
    velocity_quadrature: str = "gauss",
) -> PhaseSpaceGrid:
    """Assemble the phase-space grid, validating sizes and bounds."""
    if ell <= 0 or t_final <= 0:
        raise ValueError("ell and t_final must be positive")
    if nx < 2 or nv < 2 or nt < 2:
        raise ValueError("nx, nv, nt must all be at least 2")
    if not (0 < v0 < v1):
        raise ValueError("velocity bounds must satisfy 0 < v0 < v1")
    if velocity_quadrature == "gauss":
        pos_nodes, pos_w = _gauss_branch(v0, v1, nv)
    elif velocity_quadrature == "trapezoid":
        pos_nodes, pos_w = _trapezoid_branch(v0, v1, nv)
    else:
        raise ValueError(f"unknown velocity quadrature {velocity_quadrature!r}")
    nodes = np.concatenate([-pos_nodes[::-1], pos_nodes])
    weights = np.concatenate([pos_w[::-1], pos_w])
    space = SpatialGrid(ell=float(ell), nx=nx, nodes=np.linspace(0.0, ell, nx))
    velocity = VelocityGrid(
        v0=float(v0), v1=float(v1), nv=nv, nodes=nodes, weights=weights,
        scheme=velocity_quadrature,
    )
    time = TimeGrid(t_final=float(t_final), nt=nt)
    return PhaseSpaceGrid(space, velocity, time)


def d1x(values: np.ndarray, dx: float, axis: int = 0) -> np.ndarray:
    """First x-derivative: central interior, second-order one-sided ends."""
    values = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    out = np.empty_like(values)
    out[1:-1] = (values[2:] - values[:-2]) / (2.0 * dx)
    out[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dx)
    out[-1] = (3.0 * values[-1] - 4.0 * values[-2] + values[-3]) / (2.0 * dx)
    return np.moveaxis(out, 0, axis)


def d2x(values: np.ndarray, dx: float, axis: int = 0) -> np.ndarray:
    """Second x-derivative: central interior, the endpoint rows reuse the
    adjacent interior stencil (first-order there)."""
    values = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    out = np.empty_like(values)
    out[1:-1] = (values[2:] - 2.0 * values[1:-1] + values[:-2]) / dx**2
    out[0] = (values[2] - 2.0 * values[1] + values[0]) / dx**2
    out[-1] = (values[-1] - 2.0 * values[-2] + values[-3]) / dx**2
    return np.moveaxis(out, 0, axis)
