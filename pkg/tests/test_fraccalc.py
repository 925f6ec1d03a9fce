import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import gamma

from fracrte.fraccalc import (
    CaputoWeights,
    TimeSeries,
    caputo_half,
    caputo_half_series,
    caputo_lanes,
    check_composition,
    ml_half_neg,
    relaxation_series,
)
from fracrte.grid import TimeGrid


def _series(fn, nt, t_final=1.0):
    grid = TimeGrid(t_final, nt)
    return TimeSeries(fn(grid.nodes), grid)


def test_weights_positive_decreasing_first_value():
    w = CaputoWeights.build(dt=0.01, nt=50)
    assert np.all(w.b > 0)
    assert np.all(np.diff(w.b) < 0)
    assert w.scale * w.b[0] == pytest.approx(0.01**-0.5 / gamma(1.5), rel=1e-14)


def test_constant_series_annihilated():
    ser = _series(lambda t: np.full_like(t, 4.2), 64)
    for k in (1, 10, 64):
        assert caputo_half(ser, k) == 0.0


def test_sqrt_t_special_value():
    ser = _series(np.sqrt, 1000)
    assert caputo_half(ser, 1000) == pytest.approx(math.sqrt(math.pi) / 2.0, abs=1e-2)
    # the half-derivative of sqrt(t) is the same constant at every time
    out = caputo_half_series(ser).values
    assert np.max(np.abs(out[100:] - math.sqrt(math.pi) / 2.0)) < 2e-3


def test_quadratic_value_and_quadrature_oracle():
    # power rule: Gamma(3)/Gamma(5/2) t^{3/2}
    expected = gamma(3.0) / gamma(2.5)
    oracle, _ = quad(lambda tau: 2.0 * tau / math.sqrt(1.0 - tau), 0.0, 1.0)
    oracle /= math.sqrt(math.pi)
    assert oracle == pytest.approx(expected, rel=1e-10)
    ser = _series(lambda t: t**2, 1000)
    assert caputo_half(ser, 1000) == pytest.approx(expected, abs=1e-3)


def test_linear_series_pointwise():
    ser = _series(lambda t: t, 800)
    out = caputo_half_series(ser).values
    t = ser.grid.nodes
    assert np.max(np.abs(out[80:] - 2.0 * np.sqrt(t[80:] / math.pi))) < 2e-3


def test_power_rule_orders():
    def order(beta, expected_at_1):
        errs = []
        for nt in (250, 500, 1000, 2000):
            ser = _series(lambda t: t**beta, nt)
            errs.append(abs(caputo_half(ser, nt) - expected_at_1))
        fit = np.polyfit(np.log([1.0 / n for n in (250, 500, 1000, 2000)]), np.log(errs), 1)
        return fit[0]

    assert order(2.0, gamma(3.0) / gamma(2.5)) >= 1.4
    assert order(0.5, gamma(1.5) / gamma(1.0)) >= 0.4


def test_linearity_of_scheme():
    grid = TimeGrid(1.0, 200)
    rng = np.random.default_rng(11)
    u = rng.normal(size=201)
    w = rng.normal(size=201)
    a, b = 1.7, -0.4
    mix = TimeSeries(a * u + b * w, grid)
    direct = caputo_half(mix, 150)
    parts = a * caputo_half(TimeSeries(u, grid), 150) + b * caputo_half(TimeSeries(w, grid), 150)
    assert direct == pytest.approx(parts, rel=1e-12, abs=1e-12)


def test_caputo_half_rejects_bad_index():
    ser = _series(lambda t: t, 10)
    with pytest.raises(ValueError):
        caputo_half(ser, 0)
    with pytest.raises(ValueError):
        caputo_half(ser, 11)


def test_series_convention_and_lane_agreement():
    ser = _series(lambda t: t**2, 120)
    out = caputo_half_series(ser)
    assert out.values[0] == 0.0
    lanes = caputo_lanes(np.stack([ser.values, 2 * ser.values], axis=1), ser.grid.dt)
    for k in (1, 37, 120):
        val = caputo_half(ser, k)
        assert lanes[k, 0] == pytest.approx(val, rel=1e-10, abs=1e-12)
        assert lanes[k, 1] == pytest.approx(2 * val, rel=1e-10, abs=1e-12)


def test_zero_series_stays_zero():
    ser = _series(np.zeros_like, 50)
    assert np.all(caputo_half_series(ser).values == 0.0)


def test_composition_quadratic_converges_first_order():
    devs = []
    for nt in (500, 1000, 2000):
        rep = check_composition(_series(lambda t: t**2, nt))
        assert rep.hypothesis_ok
        devs.append(rep.max_deviation)
    assert devs[1] < devs[0] and devs[2] < devs[1]
    order = math.log(devs[0] / devs[2], 4)
    assert order >= 1.0


def test_composition_zero_series():
    rep = check_composition(_series(np.zeros_like, 100))
    assert rep.hypothesis_ok
    assert rep.max_deviation == 0.0


def test_composition_flags_nonzero_initial_value():
    rep = check_composition(_series(np.ones_like, 100))
    assert not rep.hypothesis_ok
    with pytest.raises(ValueError):
        rep.require_hypothesis()


def test_composition_flags_sqrt_start():
    # sqrt(t) has a nonvanishing half-derivative at t=0+
    rep = check_composition(_series(np.sqrt, 200))
    assert not rep.hypothesis_ok


def test_mittag_leffler_half_against_series():
    # truncated defining series at small arguments
    for z in (0.1, 0.5, 1.0):
        series = sum((-z) ** k / gamma(0.5 * k + 1.0) for k in range(80))
        assert ml_half_neg(z) == pytest.approx(series, rel=1e-12)
    assert ml_half_neg(1.0) == pytest.approx(math.e * math.erfc(1.0), rel=1e-12)


def test_relaxation_series_matches_continuum_under_refinement():
    errs = []
    for nt in (100, 400):
        u = relaxation_series(np.array([1.0]), 1.0 / nt, nt)[:, 0]
        t = np.linspace(0, 1, nt + 1)
        errs.append(np.max(np.abs(u[nt // 10:] - ml_half_neg(np.sqrt(t[nt // 10:])))))
    assert errs[1] < errs[0]
    assert errs[1] < 5e-3
