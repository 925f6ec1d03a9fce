"""Numerical laboratory for a half-order time-fractional radiative transport
equation on a slab.

The package solves the transport problem with a Caputo time derivative of
order one half, reduces it to a first-order-in-time integro-differential
system, evaluates weighted (Carleman-type) energy inequalities empirically,
and reconstructs attenuation and scattering perturbations from synthetic twin
experiments, reporting the empirical Lipschitz stability constant.

Modules
-------
grid        phase-space discretization, quadratures, discrete Sobolev norms
fraccalc    Caputo half-derivative (L1 scheme) and composition checks
coefficients  attenuation, scattering and phase-function data on the grid
forward     implicit upwind / source-iteration solver for the transport system
reduction   first-order-in-time operators, reduced source and residual checks
carleman    weight functions and two-sided evaluation of the energy estimates
inverse     R-matrix assembly, source recovery, x-march reconstruction,
            stability reports
io          CSV / binary artifact writers and the run manifest
cli         configuration parsing and subcommand dispatch
"""

from fracrte.grid import PhaseSpaceGrid, build_grid

__all__ = ["PhaseSpaceGrid", "build_grid"]

__version__ = "0.1.0"
