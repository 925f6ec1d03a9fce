"""Caputo derivative of order one half on uniform time grids.

The L1 scheme replaces the integrand's time derivative by the slope of the
piecewise-linear interpolant, which turns the half-derivative at t_k into a
weighted sum of the first differences of the series:

    D^{1/2} u(t_k) ~ dt^{-1/2}/Gamma(3/2) * sum_{j<k} b_{k-1-j} (u_{j+1} - u_j),
    b_m = (m+1)^{1/2} - m^{1/2}.

The weights are positive and decrease in the lag, the scheme is linear and
annihilates constants.  On smooth series the pointwise error away from t=0 is
O(dt^{3/2}); series with a sqrt(t) start keep an O(1) defect at the very
first node, so checks of limiting behaviour at t=0 work through the series
convention value 0 rather than through extrapolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import erfcx

from fracrte.grid import TimeGrid

__all__ = [
    "GAMMA_HALF",
    "CaputoWeights",
    "TimeSeries",
    "caputo_half",
    "caputo_half_series",
    "caputo_lanes",
    "caputo_lanes_at",
    "CompositionReport",
    "check_composition",
    "ml_half_neg",
    "relaxation_series",
]

GAMMA_HALF = math.sqrt(math.pi)  # Gamma(1/2)
_GAMMA_3_HALF = 0.5 * math.sqrt(math.pi)  # Gamma(3/2)


@dataclass(frozen=True)
class CaputoWeights:
    """L1 convolution weights for order 1/2 on a uniform grid.

    ``b[m]`` multiplies the increment that lags m steps behind the
    evaluation node; the overall scale is dt^{-1/2}/Gamma(3/2), so the most
    recent increment carries exactly that factor.
    """

    dt: float
    nt: int
    b: np.ndarray = field(repr=False)

    @property
    def scale(self) -> float:
        return 1.0 / (_GAMMA_3_HALF * math.sqrt(self.dt))

    @classmethod
    def build(cls, dt: float, nt: int) -> "CaputoWeights":
        if dt <= 0 or nt < 1:
            raise ValueError("need dt > 0 and nt >= 1")
        m = np.arange(nt, dtype=float)
        return cls(dt=float(dt), nt=nt, b=np.sqrt(m + 1.0) - np.sqrt(m))


@dataclass
class TimeSeries:
    """Scalar samples on the nodes of a TimeGrid (length nt + 1)."""

    values: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.nt + 1,):
            raise ValueError(
                f"series length {self.values.shape} does not match nt+1={self.grid.nt + 1}"
            )


def _as_values(series) -> tuple[np.ndarray, float]:
    if isinstance(series, TimeSeries):
        return series.values, series.grid.dt
    raise TypeError("expected a TimeSeries")


def caputo_half(series: TimeSeries, k: int) -> float:
    """L1 value of the half-derivative at node k >= 1."""
    values, dt = _as_values(series)
    if k < 1:
        raise ValueError("the discrete half-derivative is undefined at k=0")
    if k >= values.shape[0]:
        raise ValueError(f"index {k} outside the series")
    w = CaputoWeights.build(dt, k)
    inc = np.diff(values[: k + 1])
    return float(w.scale * (w.b[:k][::-1] @ inc))


def caputo_half_series(series: TimeSeries) -> TimeSeries:
    """Half-derivative at every node; the value at t=0 is 0 by convention."""
    values, dt = _as_values(series)
    out = np.empty_like(values)
    out[0] = 0.0
    out[1:] = caputo_lanes(values[:, None], dt)[1:, 0]
    return TimeSeries(values=out, grid=series.grid)


def caputo_lanes(values: np.ndarray, dt: float) -> np.ndarray:
    """Half-derivative along axis 0 of an (nt+1, ...) array of time lanes.

    Returns an array of the same shape with row 0 set to 0.  Uses FFT
    convolution of the increment rows against the L1 weights, which keeps
    the cost near nt log nt per lane.
    """
    values = np.asarray(values, dtype=float)
    nt = values.shape[0] - 1
    if nt < 1:
        raise ValueError("need at least two time nodes")
    w = CaputoWeights.build(dt, nt)
    inc = np.diff(values, axis=0)
    flat = inc.reshape(nt, -1)
    kern = w.b[:, None]
    conv = fftconvolve(flat, kern, axes=0)[:nt]
    out = np.zeros_like(values)
    out.reshape(nt + 1, -1)[1:] = w.scale * conv
    return out


def caputo_lanes_at(values: np.ndarray, dt: float, k: int) -> np.ndarray:
    """Half-derivative of every lane at a single node k >= 1 (direct sum)."""
    values = np.asarray(values, dtype=float)
    if k < 1 or k >= values.shape[0]:
        raise ValueError(f"index {k} outside the series")
    w = CaputoWeights.build(dt, k)
    inc = np.diff(values[: k + 1], axis=0)
    flat = inc.reshape(k, -1)
    out = w.scale * (w.b[:k][::-1] @ flat)
    return out.reshape(values.shape[1:])


@dataclass(frozen=True)
class CompositionReport:
    """Deviation of the twice-applied half-derivative from the first derivative."""

    max_deviation: float
    l2_deviation: float
    hypothesis_ok: bool
    initial_value: float
    initial_half_derivative: float

    def require_hypothesis(self):
        if not self.hypothesis_ok:
            raise ValueError(
                "composition hypothesis violated: the series or its "
                "half-derivative does not vanish at t=0 "
                f"(u(0)={self.initial_value:.3e}, "
                f"D^{{1/2}}u(0+)~{self.initial_half_derivative:.3e})"
            )


def check_composition(series: TimeSeries, hypothesis_atol: float = 1e-12) -> CompositionReport:
    """Compare D^{1/2} D^{1/2} u against the centered first difference of u.

    Valid only for series with u(0) = 0 and vanishing half-derivative at
    t=0; the report flags violations instead of silently computing.  The
    half-derivative start is probed at the first node: a value comparable to
    the series-wide maximum marks a nonzero limit.
    """
    values, dt = _as_values(series)
    half = caputo_half_series(series)
    dev_grid = caputo_half_series(half).values
    dudt = (values[2:] - values[:-2]) / (2.0 * dt)
    dev = dev_grid[1:-1] - dudt
    scale = float(np.max(np.abs(half.values)))
    init_half = float(half.values[1]) if half.values.shape[0] > 1 else 0.0
    hyp_ok = abs(values[0]) <= hypothesis_atol * max(1.0, np.max(np.abs(values)))
    if scale > hypothesis_atol:
        hyp_ok = hyp_ok and abs(init_half) <= 0.5 * scale
    l2 = math.sqrt(float(np.sum(dev**2)) * dt)
    return CompositionReport(
        max_deviation=float(np.max(np.abs(dev))) if dev.size else 0.0,
        l2_deviation=l2,
        hypothesis_ok=hyp_ok,
        initial_value=float(values[0]),
        initial_half_derivative=init_half,
    )


def ml_half_neg(z):
    """Mittag-Leffler value E_{1/2}(-z) for real z, via exp(z^2) erfc(z).

    erfcx evaluates the product stably, so large arguments do not overflow.
    """
    return erfcx(np.asarray(z, dtype=float))


def relaxation_series(rate, dt: float, nt: int) -> np.ndarray:
    """Discrete solution of D^{1/2} u + rate * u = 0 with u(0) = 1.

    ``rate`` may be a scalar or an array of independent lanes; the output
    has shape (nt+1,) + shape(rate).  This is the same recursion the full
    solver performs for spatially homogeneous data, so its values may be
    used as inflow traces that keep such solutions exactly homogeneous.
    """
    rate = np.asarray(rate, dtype=float)
    w = CaputoWeights.build(dt, nt)
    u = np.empty((nt + 1,) + rate.shape)
    u[0] = 1.0
    inc = np.zeros_like(u[:-1])
    for k in range(1, nt + 1):
        # implicit step: scale*(u_k - u_{k-1}) + scale*history + rate*u_k = 0
        if k > 1:
            hist = (w.b[1:k][::-1] @ inc[: k - 1].reshape(k - 1, -1)).reshape(rate.shape)
        else:
            hist = np.zeros(rate.shape)
        u[k] = (w.scale * u[k - 1] - w.scale * hist) / (w.scale + rate)
        inc[k - 1] = u[k] - u[k - 1]
    return u
