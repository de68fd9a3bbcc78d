"""Tests for maturity interpolation, bond prices, and the spot measure."""

from __future__ import annotations

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import quad

from affinelibor.errors import FittingError
from affinelibor.multicurve import knotted_manifold, calibrate, martingale_value
from affinelibor.tenor import (
    INTERPOLATION_KINDS,
    NelsonSiegelCurve,
    SpotCharacteristics,
    TableForwardCurve,
    TermStructure,
    _build_hybrid,
    interpolate_vectors,
    short_rate_mgf,
    verify_forward_curve_consistency,
)

from conftest import discount_curve


@pytest.fixture(scope="module")
def flat_linear_curve() -> TableForwardCurve:
    # matches discount_curve: -log B = 0.02 T + 0.001 T^2 => f = 0.02 + 0.002 T
    return TableForwardCurve(times=np.array([0.0, 2.0]), values=np.array([0.02, 0.024]))


@pytest.fixture(scope="module")
def seq_knot(flow_mc, init8):
    manifold = knotted_manifold(
        flow_mc, init8.log_ratio_targets(), [2, 4, 6], [0, 1, 2, 0], rounding=0.3
    )
    return calibrate(flow_mc, init8, manifold)


# ---------------------------------------------------------------------------
# forward curves
# ---------------------------------------------------------------------------


def test_nelson_siegel_values_and_integral():
    curve = NelsonSiegelCurve(beta0=0.025, beta1=-0.015, beta2=0.01, decay=2.0)
    assert curve.value(0.0) == pytest.approx(0.010)
    assert curve.value(1e9) == pytest.approx(0.025)
    for a, b in ((0.0, 1.0), (0.5, 3.7), (2.0, 2.0)):
        num, _ = quad(curve.value, a, b)
        assert curve.integral(a, b) == pytest.approx(num, abs=1e-12)
    with pytest.raises(ValueError):
        NelsonSiegelCurve(0.02, 0.0, 0.0, decay=0.0)


def test_table_curve_values_and_integral():
    curve = TableForwardCurve(
        times=np.array([0.0, 1.0, 3.0]), values=np.array([0.02, 0.03, 0.01])
    )
    assert curve.value(0.5) == pytest.approx(0.025)
    assert curve.value(5.0) == pytest.approx(0.01)  # constant extrapolation
    for a, b in ((0.0, 0.7), (0.5, 2.5), (0.0, 3.0), (2.0, 6.0), (-1.0, 0.5)):
        num, _ = quad(curve.value, a, b, limit=200)
        assert curve.integral(a, b) == pytest.approx(num, abs=1e-10)
    with pytest.raises(ValueError):
        TableForwardCurve(times=np.array([0.0, 0.0]), values=np.array([1.0, 2.0]))


def test_forward_curve_consistency_check(init8, flat_linear_curve):
    dev = verify_forward_curve_consistency(flat_linear_curve, init8)
    assert dev < 1e-12
    skewed = NelsonSiegelCurve(beta0=0.03, beta1=0.0, beta2=0.0, decay=1.0)
    with pytest.raises(FittingError, match="inconsistent"):
        verify_forward_curve_consistency(skewed, init8)


# ---------------------------------------------------------------------------
# interpolation kinds
# ---------------------------------------------------------------------------


def _all_kinds(seq, flow, curve):
    out = {}
    for kind in INTERPOLATION_KINDS:
        out[kind] = interpolate_vectors(seq, kind, flow=flow, forward_curve=curve)
    return out


def test_kinds_interpolate_and_stay_monotone(flow_mc, seq8, flat_linear_curve):
    curves = _all_kinds(seq8, flow_mc, flat_linear_curve)
    dates = seq8.tenor.dates
    dense = np.linspace(0.0, 2.0, 400)
    for kind, uc in curves.items():
        atol = 1e-7 if kind == "curve-fit" else 1e-12
        assert_allclose(uc.value(dates), seq8.u, atol=atol, err_msg=kind)
        vals = uc.value(dense)
        assert np.all(np.diff(vals, axis=0) <= 1e-9), kind
        assert np.all(vals >= -1e-12), kind


def test_alias_names_map_to_canonical(seq8, flow_mc, flat_linear_curve):
    assert interpolate_vectors(seq8, "if2").kind == "linear"
    assert interpolate_vectors(seq8, "if4").kind == "monotone"
    assert (
        interpolate_vectors(seq8, "if1", flow=flow_mc, forward_curve=flat_linear_curve).kind
        == "curve-fit"
    )
    with pytest.raises(ValueError, match="unknown interpolation kind"):
        interpolate_vectors(seq8, "quadratic")
    with pytest.raises(ValueError, match="needs a flow"):
        interpolate_vectors(seq8, "curve-fit")


def test_linear_kind_right_derivative_at_knots(seq8):
    uc = interpolate_vectors(seq8, "linear")
    dates = seq8.tenor.dates
    slopes = np.diff(seq8.u, axis=0) / np.diff(dates)[:, None]
    for k in range(len(dates) - 1):
        assert_allclose(uc.derivative(dates[k]), slopes[k], atol=0.0)
    # last knot keeps the final segment's slope
    assert_allclose(uc.derivative(dates[-1]), slopes[-1], atol=0.0)
    assert not uc.is_c1


def test_monotone_kind_is_c1(seq8):
    uc = interpolate_vectors(seq8, "monotone")
    assert uc.is_c1
    eps = 1e-8
    for T in seq8.tenor.dates[1:-1]:
        left = uc.derivative(T - eps)
        right = uc.derivative(T + eps)
        assert_allclose(left, right, atol=1e-5)


def test_hybrid_reduces_to_linear_when_all_components_move(seq8):
    """On a straight-ray manifold every interval moves all components."""
    hybrid = interpolate_vectors(seq8, "spline-hybrid")
    linear = interpolate_vectors(seq8, "linear")
    assert not hybrid.monotone_fallback
    T = np.linspace(0.0, 2.0, 173)
    assert_allclose(hybrid.value(T), linear.value(T), atol=1e-14)
    assert_allclose(hybrid.derivative(T), linear.derivative(T), atol=1e-12)


def test_hybrid_splines_single_component_stretches(seq_knot):
    hybrid = interpolate_vectors(seq_knot, "spline-hybrid")
    linear = interpolate_vectors(seq_knot, "linear")
    dates = seq_knot.tenor.dates
    deltas = np.diff(seq_knot.u, axis=0)
    active = np.abs(deltas) > 1e-13
    single = active.sum(axis=1) == 1
    assert np.any(single), "fixture should contain single-component stretches"
    assert np.any(~single), "fixture should contain curved stretches"
    # knots are reproduced and monotonicity held without a fallback
    assert not hybrid.monotone_fallback
    assert_allclose(hybrid.value(dates), seq_knot.u, atol=1e-12)
    # on curved stretches the hybrid is the linear interpolant
    for l in np.nonzero(~single)[0]:
        mid = np.linspace(dates[l], dates[l + 1], 7)
        assert_allclose(hybrid.value(mid), linear.value(mid), atol=1e-13)
    # within a spline stretch it deviates from the chord
    spline_intervals = np.nonzero(single)[0]
    deviation = 0.0
    for l in spline_intervals:
        mid = 0.5 * (dates[l] + dates[l + 1])
        deviation = max(deviation, float(np.max(np.abs(hybrid.value(mid) - linear.value(mid)))))
    assert deviation > 1e-12
    # the active component's derivative is continuous at stretch boundaries
    eps = 1e-9
    for l in spline_intervals:
        j = int(np.nonzero(active[l])[0][0])
        for T in (dates[l], dates[l + 1]):
            if T in (dates[0], dates[-1]):
                continue
            left = hybrid.derivative(T - eps)[j]
            right = hybrid.derivative(T + eps)[j]
            assert left == pytest.approx(right, abs=1e-6)


def test_hybrid_falls_back_when_spline_overshoots():
    dates = np.linspace(0.0, 4.0, 5)
    knots = np.array([[1.0], [0.999], [0.998], [0.0], [0.0]])
    uc = _build_hybrid(dates, knots)
    assert uc.monotone_fallback
    assert uc.kind == "spline-hybrid"
    assert uc.is_c1
    dense = np.linspace(0.0, 4.0, 500)
    assert np.all(np.diff(uc.value(dense)[:, 0]) <= 1e-12)


def test_staircase_structure_zeroes_interior_derivatives():
    """One component per interval: C^1 interpolants go flat at the knots."""
    dates = np.linspace(0.0, 6.0, 7)
    knots = np.array(
        [
            [3.0, 2.0, 2.0],
            [2.0, 2.0, 2.0],
            [2.0, 1.0, 2.0],
            [2.0, 1.0, 1.0],
            [1.0, 1.0, 1.0],
            [1.0, 0.0, 1.0],
            [1.0, 0.0, 0.0],
        ]
    )
    for build in (
        lambda: _build_hybrid(dates, knots),
        lambda: __import__("affinelibor.tenor", fromlist=["_MonotoneUCurve"])._MonotoneUCurve(
            dates, knots
        ),
    ):
        uc = build()
        assert uc.is_c1
        for T in dates[1:-1]:
            assert_allclose(uc.derivative(float(T)), np.zeros(3), atol=1e-12)
        dense = np.linspace(0.0, 6.0, 600)
        assert np.all(np.diff(uc.value(dense), axis=0) <= 1e-12)


def test_curve_fit_matches_forward_curve(flow_mc, seq8, flat_linear_curve):
    uc = interpolate_vectors(seq8, "curve-fit", flow=flow_mc, forward_curve=flat_linear_curve)
    assert uc.max_residual < 5e-10
    T = np.linspace(0.0, 2.0, 301)
    assert np.max(np.abs(uc.residuals(T))) < 1e-9
    assert uc.is_c1
    # time-zero instantaneous forwards reproduce the input curve
    ts = TermStructure(flow_mc, uc)
    f0 = ts.instantaneous_forward_rate(0.0, T, flow_mc.spec.x0)
    assert np.max(np.abs(f0 - flat_linear_curve.value(T))) < 1e-7


# ---------------------------------------------------------------------------
# bonds and rates
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def ts_linear(flow_mc, seq8) -> TermStructure:
    return TermStructure(flow_mc, interpolate_vectors(seq8, "linear"))


def test_bond_reduces_to_martingale_ratio_at_tenor_dates(ts_linear, flow_mc, seq8):
    """At tenor dates the continuous bond equals the discrete ratio exactly."""
    x = np.array([1.2, 0.9, 1.1])
    t = 0.6
    lag = flow_mc.spec.horizon - t
    u_t = ts_linear.ucurve.value(t)
    for k in range(seq8.tenor.ceil_index(t), seq8.tenor.n_periods + 1):
        T_k = float(seq8.tenor.dates[k])
        got = ts_linear.log_bond_price(t, T_k, x)
        sols = flow_mc.pairs(np.vstack([seq8.u[k], u_t]), lag)
        log_m = sols["phi"] + sols["psi"] @ x
        assert got == pytest.approx(log_m[0] - log_m[1], abs=1e-12)


def test_bond_unit_value_and_monotonicity(ts_linear, spec_mc):
    rng = np.random.default_rng(8)
    x = rng.uniform(0.3, 2.0, size=(6, 3))
    for t in (0.0, 0.4, 1.31):
        assert np.all(ts_linear.bond_price(t, float(t), x) == 1.0)
        T = np.linspace(t, 2.0, 40)
        B = ts_linear.bond_price(t, T, x)
        assert np.all(np.diff(B, axis=1) < 0.0)
        assert np.all(B > 0.0)
    with pytest.raises(ValueError):
        ts_linear.log_bond_price(1.0, 0.5, spec_mc.x0)


def test_bond_reproduces_initial_discounts(ts_linear, spec_mc, init8):
    B0 = ts_linear.bond_price(0.0, init8.tenor.dates, spec_mc.x0)
    assert_allclose(B0, init8.ois_discount, rtol=1e-9)


def test_forward_rate_matches_finite_differences(ts_linear, spec_mc):
    h = 1e-5
    rng = np.random.default_rng(21)
    for _ in range(12):
        t = rng.uniform(0.0, 1.8)
        T = rng.uniform(t + 2 * h, 2.0 - 2 * h)
        x = rng.uniform(0.3, 2.0, size=3)
        f = ts_linear.instantaneous_forward_rate(t, T, x)
        lo = ts_linear.log_bond_price(t, T - h, x)
        hi = ts_linear.log_bond_price(t, T + h, x)
        fd = -(hi - lo) / (2 * h)
        assert f == pytest.approx(fd, abs=1e-4)


def test_short_rate_and_tables_consistency(ts_linear, spec_mc):
    times = np.array([0.0, 0.3, 0.8, 1.5])
    tables = ts_linear.coefficient_tables(times)
    x = np.array([1.4, 0.7, 1.0])
    for i, t in enumerate(times):
        r_direct = ts_linear.short_rate(float(t), x)
        r_table = tables.p[i] + tables.q[i] @ x
        assert r_direct == pytest.approx(r_table, rel=1e-7, abs=1e-10)
        sol = ts_linear.flow.solve(2.0 - t, ts_linear.ucurve.value(float(t)), gradients=False)
        assert tables.P[i] == pytest.approx(sol.phi, rel=1e-7, abs=1e-10)
        assert_allclose(tables.Q[i], sol.psi, rtol=1e-7, atol=1e-10)


def test_term_structure_horizon_mismatch(flow3, seq8):
    with pytest.raises(ValueError, match="horizon"):
        TermStructure(flow3, interpolate_vectors(seq8, "linear"))


# ---------------------------------------------------------------------------
# simulation with the short rate
# ---------------------------------------------------------------------------


def test_terminal_simulation_records_short_rate(ts_linear, spec_mc):
    grid = np.linspace(0.0, 1.0, 11)
    paths = ts_linear.simulate(grid, 500, seed=7)
    assert paths.measure == "terminal"
    assert paths.scheme == "exact"
    assert paths.short_rate is not None
    tables = ts_linear.coefficient_tables(grid)
    r0 = tables.p[0] + tables.q[0] @ np.ones(3)
    assert_allclose(paths.short_rate[0], r0, rtol=1e-6)
    assert np.all(paths.integrated_short_rate[0] == 0.0)
    # exact-scheme integrals are the trapezoid of the recorded rates
    manual = np.zeros_like(paths.short_rate)
    for l in range(1, len(grid)):
        manual[l] = manual[l - 1] + 0.5 * (
            paths.short_rate[l - 1] + paths.short_rate[l]
        ) * (grid[l] - grid[l - 1])
    assert_allclose(paths.integrated_short_rate, manual, atol=1e-12)
    again = ts_linear.simulate(grid, 500, seed=7)
    assert np.array_equal(paths.states, again.states)


def test_spot_simulation_reprices_bonds(ts_linear, spec_mc, init8):
    """Discounted unit payoffs recover the initial curve under the spot
    measure (small-scale version of the pathwise-discounting property)."""
    grid = np.linspace(0.0, 2.0, 101)
    paths = ts_linear.simulate(grid, 40_000, seed=11, measure="spot", substeps=2)
    assert paths.measure == "spot"
    assert paths.scheme == "euler"
    for T, want in ((1.0, init8.ois_discount[4]), (2.0, init8.ois_discount[8])):
        li = int(np.argmin(np.abs(grid - T)))
        df = np.exp(-paths.integrated_short_rate[li])
        se = df.std(ddof=1) / math.sqrt(df.size)
        assert abs(df.mean() - want) < 3.0 * se + 2e-4


def test_measure_density_is_mean_one(ts_linear, spec_mc):
    grid = np.linspace(0.0, 1.0, 51)
    paths = ts_linear.simulate(grid, 40_000, seed=23)
    dens = np.exp(
        ts_linear.log_measure_density(1.0, paths.states[-1], paths.integrated_short_rate[-1])
    )
    se = dens.std(ddof=1) / math.sqrt(dens.size)
    assert abs(dens.mean() - 1.0) < 3.0 * se + 2e-4


def test_spot_characteristics_shift(ts_linear, spec_mc):
    spot = SpotCharacteristics(ts_linear)
    w = np.array([0.2, -0.1, 0.15])
    t = 0.7
    q = ts_linear.numeraire_psi(t)
    # constant part is unchanged (F is linear in the argument)
    assert spot.F(t, w) == pytest.approx(float(spec_mc.F(w)), rel=1e-12)
    want = spec_mc.R(w + q) - spec_mc.R(q)
    assert_allclose(spot.R(t, w), want, rtol=1e-12)


def test_short_rate_mgf_against_spot_monte_carlo(ts_linear):
    t = 1.0
    w = 4.0
    analytic = short_rate_mgf(ts_linear, w, 0.0, t, np.ones(3))
    grid = np.linspace(0.0, t, 51)
    paths = ts_linear.simulate(grid, 40_000, seed=29, measure="spot", substeps=2)
    sample = np.exp(w * paths.short_rate[-1])
    se = sample.std(ddof=1) / math.sqrt(sample.size)
    assert abs(sample.mean() - analytic) < 3.5 * se + 1e-4
