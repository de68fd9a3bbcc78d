"""Tests for tenor structures, manifolds, calibration, and rates."""

from __future__ import annotations

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from affinelibor.affine import AffineModelSpec, RiccatiFlow, simulate_paths
from affinelibor.errors import FittingError, ScenarioError
from affinelibor.multicurve import (
    CalibratedSequences,
    InitialTermStructure,
    LineSegment,
    Manifold,
    PlanarArc,
    QuarterArc,
    TenorStructure,
    calibrate,
    fit_u_sequence,
    fit_v_sequences,
    forward_measure_characteristics,
    initial_term_structure_from_csv,
    knotted_manifold,
    libor_rate,
    line_manifold,
    load_discount_csv,
    martingale_value,
    ois_forward_rate,
    spread,
    staged_manifold,
)

from conftest import discount_curve as _discount_curve

# the shared two-year fixtures (spec_mc, flow_mc, tenor8, init8,
# manifold_line, seq8) live in conftest.py


# ---------------------------------------------------------------------------
# tenor structures
# ---------------------------------------------------------------------------


def test_tenor_structure_subgrids(tenor8):
    assert tenor8.n_periods == 8
    assert tenor8.delta == pytest.approx(0.25)
    assert_allclose(tenor8.sub_dates("6M"), [0.0, 0.5, 1.0, 1.5, 2.0])
    assert tenor8.n_sub("6M") == 4
    assert tenor8.delta_x("6M") == pytest.approx(0.5)
    assert_allclose(tenor8.sub_indices("6M"), [0, 2, 4, 6, 8])


def test_tenor_structure_validation():
    with pytest.raises(ValueError):
        TenorStructure(dates=np.array([0.0, 0.25, 0.75]), tenors={})
    with pytest.raises(ValueError):
        TenorStructure(dates=np.array([0.1, 0.35]), tenors={})
    with pytest.raises(ValueError):
        TenorStructure(dates=np.linspace(0.0, 2.0, 9), tenors={"5M": 3})


def test_ceil_index_is_strict(tenor8):
    """Exactly at a tenor date the date itself is excluded."""
    assert tenor8.ceil_index(0.0) == 1
    assert tenor8.ceil_index(0.2) == 1
    assert tenor8.ceil_index(0.25) == 2
    assert tenor8.ceil_index(0.25 - 1e-12) == 2  # identified with the date
    assert tenor8.ceil_index(0.26) == 2
    assert tenor8.ceil_index(0.25, "6M") == 1
    assert tenor8.ceil_index(0.5, "6M") == 2
    with pytest.raises(ValueError):
        tenor8.ceil_index(2.5)


def test_initial_term_structure_validation(tenor8):
    B = _discount_curve(tenor8.dates)
    with pytest.raises(ValueError):
        InitialTermStructure(tenor=tenor8, ois_discount=B[:-1], libor={})
    bad = B.copy()
    bad[3] = bad[2] * 1.01
    with pytest.raises(ValueError):
        InitialTermStructure(tenor=tenor8, ois_discount=bad, libor={})
    with pytest.raises(ValueError):
        InitialTermStructure(tenor=tenor8, ois_discount=B, libor={"9M": np.zeros(2)})
    with pytest.raises(ValueError):
        InitialTermStructure(tenor=tenor8, ois_discount=B, libor={"6M": np.zeros(3)})


def test_initial_spreads(init8):
    assert_allclose(init8.spreads("3M"), 0.0010, rtol=1e-12)
    assert_allclose(init8.spreads("6M"), 0.0020, rtol=1e-12)
    tau = init8.log_ratio_targets()
    assert tau[-1] == 0.0
    assert np.all(np.diff(tau) < 0)


# ---------------------------------------------------------------------------
# manifolds
# ---------------------------------------------------------------------------


def test_quarter_arc_geometry():
    arc = QuarterArc(
        start=np.array([1.0, 2.0, 0.0]),
        dir_in=np.array([0.0, -1.0, 0.0]),
        dir_out=np.array([-1.0, 0.0, 0.0]),
        radius_in=1.0,
        radius_out=1.0,
    )
    assert_allclose(arc.end, [0.0, 1.0, 0.0])
    assert arc.length == pytest.approx(0.5 * math.pi)
    s2 = math.sqrt(0.5)
    assert_allclose(arc.point(0.5), [1.0 - (1.0 - s2), 2.0 - s2, 0.0])
    assert_allclose(arc.tangent(0.0), [0.0, -1.0, 0.0], atol=1e-15)
    assert_allclose(arc.tangent(1.0), [-1.0, 0.0, 0.0], atol=1e-15)


def test_planar_arc_quarter_turn_matches_circle():
    arc = PlanarArc(
        start=np.array([1.0, 2.0, 0.0]),
        dir_in=np.array([0.0, -1.0, 0.0]),
        dir_out=np.array([-1.0, 0.0, 0.0]),
        radius=1.0,
    )
    assert arc.angle == pytest.approx(0.5 * math.pi)
    assert arc.length == pytest.approx(0.5 * math.pi)
    assert_allclose(arc.end, [0.0, 1.0, 0.0], atol=1e-15)
    s2 = math.sqrt(0.5)
    assert_allclose(arc.point(0.5), [1.0 - (1.0 - s2), 2.0 - s2, 0.0])
    assert_allclose(arc.tangent(0.0), arc.dir_in, atol=1e-15)
    assert_allclose(arc.tangent(1.0), arc.dir_out, atol=1e-15)


def test_planar_arc_oblique_turn():
    """A 30-degree blend: endpoint and tangents from the circle geometry."""
    theta = math.radians(30.0)
    arc = PlanarArc(
        start=np.array([1.0, 2.0]),
        dir_in=np.array([0.0, -1.0]),
        dir_out=np.array([-math.sin(theta), -math.cos(theta)]),
        radius=2.0,
    )
    assert arc.angle == pytest.approx(theta)
    assert arc.length == pytest.approx(2.0 * theta)
    assert_allclose(arc.end, [math.sqrt(3.0) - 1.0, 1.0], atol=1e-14)
    assert_allclose(arc.tangent(1.0), arc.dir_out, atol=1e-14)
    # every intermediate tangent is a nonnegative mix of the end directions
    for frac in (0.25, 0.5, 0.75):
        t = arc.tangent(frac)
        assert np.all(t <= 1e-15)
    # points stay at distance radius from the circle center
    center = arc.start + 2.0 * np.array([-1.0, 0.0])  # start + r * normal
    pts = arc.point(np.linspace(0.0, 1.0, 9))
    assert_allclose(np.linalg.norm(pts - center, axis=1), 2.0, rtol=1e-14)


def test_planar_arc_validation():
    d_in = np.array([0.0, -1.0])
    with pytest.raises(ValueError, match="unit vector"):
        PlanarArc(np.zeros(2), 2.0 * d_in, np.array([-1.0, 0.0]), 1.0)
    with pytest.raises(ValueError, match="distinct"):
        PlanarArc(np.zeros(2), d_in, d_in.copy(), 1.0)
    with pytest.raises(ValueError, match="distinct"):
        PlanarArc(np.zeros(2), d_in, -d_in, 1.0)
    with pytest.raises(ValueError, match="radius"):
        PlanarArc(np.zeros(2), d_in, np.array([-1.0, 0.0]), 0.0)


def test_manifold_validation():
    up = LineSegment(np.array([1.0, 1.0]), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        Manifold([up])
    down = LineSegment(np.array([1.0, 1.0]), np.array([1.0, 0.0]))
    with pytest.raises(ValueError):  # does not end at the origin
        Manifold([down])
    a = LineSegment(np.array([2.0, 1.0]), np.array([1.0, 1.0]))
    b = LineSegment(np.array([0.5, 1.0]), np.array([0.0, 0.0]))
    with pytest.raises(ValueError):  # discontinuous join
        Manifold([a, b])


def test_line_manifold_parameterization(manifold_line):
    m = manifold_line
    assert m.s_max == pytest.approx(np.linalg.norm([1.5, 1.2, 1.0]))
    assert_allclose(m.point(0.0), [1.5, 1.2, 1.0])
    assert_allclose(m.point(m.s_max), [0.0, 0.0, 0.0])
    assert_allclose(m.point_many(np.array([0.0, 0.5 * m.s_max, m.s_max]))[1], [0.75, 0.6, 0.5])
    assert m.is_c1


def test_sharp_corners_break_c1():
    a = LineSegment(np.array([2.0, 1.0]), np.array([1.0, 1.0]))
    b = LineSegment(np.array([1.0, 1.0]), np.array([1.0, 0.0]))
    c = LineSegment(np.array([1.0, 0.0]), np.array([0.0, 0.0]))
    m = Manifold([a, b, c])
    assert not m.is_c1
    assert m.s_max == pytest.approx(3.0)


def test_knotted_manifold_places_corners_on_targets(flow_mc, init8):
    tau = init8.log_ratio_targets()
    sharp = knotted_manifold(flow_mc, tau, [2, 4, 6], [0, 1, 2, 0], rounding=0.0)
    assert not sharp.is_c1
    # the unrounded corners are the interior segment joins
    corners = [seg.end for seg in sharp.segments[:-1]]
    for corner, k in zip(corners, [2, 4, 6]):
        got = float(flow_mc.log_m0(corner[None, :])[0])
        assert got == pytest.approx(tau[k], abs=1e-10)
    rounded = knotted_manifold(flow_mc, tau, [2, 4, 6], [0, 1, 2, 0], rounding=0.3)
    assert rounded.is_c1
    assert_allclose(rounded.point(rounded.s_max), np.zeros(3), atol=1e-15)
    # every path point stays in the orthant and moves componentwise downward
    s = np.linspace(0.0, rounded.s_max, 200)
    pts = rounded.point_many(s)
    assert np.all(pts >= -1e-12)
    assert np.all(np.diff(pts, axis=0) <= 1e-10)


def test_knotted_manifold_argument_validation(flow_mc, init8):
    tau = init8.log_ratio_targets()
    with pytest.raises(ValueError):
        knotted_manifold(flow_mc, tau, [2, 4], [0, 1])  # sector/axis count mismatch
    with pytest.raises(ValueError):
        knotted_manifold(flow_mc, tau, [4, 2], [0, 1, 2])
    with pytest.raises(ValueError):
        knotted_manifold(flow_mc, tau, [2, 4], [0, 0, 1])


@pytest.fixture(scope="module")
def staged_mc(flow_mc, init8):
    tau = init8.log_ratio_targets()
    return staged_manifold(flow_mc, tau, [2, 3, 5, 6], [0, 1, 2])


def test_staged_manifold_geometry(flow_mc, init8, staged_mc):
    m = staged_mc
    assert m.is_c1
    assert len(m.segments) == 5
    assert_allclose(m.point(m.s_max), np.zeros(3), atol=1e-15)
    # two curved stretches between the 1st/2nd and 3rd/4th junctions
    br = m.junction_parameters
    assert_allclose(m.arc_spans, [(br[0], br[1]), (br[2], br[3])], rtol=1e-14)
    # junction martingale values hit the knot targets
    tau = init8.log_ratio_targets()
    for s_j, k in zip(br, [2, 3, 5, 6]):
        got = float(flow_mc.log_m0(m.point(s_j)[None, :])[0])
        assert got == pytest.approx(tau[k], abs=1e-10)
    # componentwise non-increasing inside the nonnegative orthant
    pts = m.point_many(np.linspace(0.0, m.s_max, 400))
    assert np.all(pts >= -1e-12)
    assert np.all(np.diff(pts, axis=0) <= 1e-10)


def test_staged_manifold_sheds_components_in_order(flow_mc, init8, staged_mc):
    """One driving component freezes to zero across each arc."""
    u, s = fit_u_sequence(flow_mc, init8, staged_mc)
    assert np.all(u[-1] == 0.0)
    # component 0 only moves in the far sector (indices up to the 2nd knot)
    assert np.all(u[:2, 0] > 1e-6)
    assert_allclose(u[3:, 0], 0.0, atol=1e-12)
    # component 1 is done by the 4th knot, component 2 runs to the end
    assert np.all(u[:5, 1] > 1e-6)
    assert_allclose(u[6:, 1], 0.0, atol=1e-12)
    assert np.all(u[:-1, 2] > 1e-6)
    # knot rows sit on the junctions
    assert_allclose(s[[2, 3, 5, 6]], staged_mc.junction_parameters, atol=1e-9)


def test_staged_manifold_large_turns_keep_terminal_row_exact(flow_mc, init8):
    """Steep arc angles must not leak rounding noise into the final row."""
    tau = init8.log_ratio_targets()
    for turns in ((60.0, 60.0), (90.0, 90.0)):
        m = staged_manifold(flow_mc, tau, [2, 3, 5, 6], [0, 1, 2], turn_degrees=turns)
        seq = calibrate(flow_mc, init8, m)
        assert np.all(seq.u[-1] == 0.0)
        assert np.all(seq.u >= 0.0)
        assert np.all(np.diff(seq.u, axis=0) <= 0.0)


def test_staged_manifold_argument_validation(flow_mc, init8):
    tau = init8.log_ratio_targets()
    with pytest.raises(ValueError, match="four knot"):
        staged_manifold(flow_mc, tau, [2, 3, 5], [0, 1, 2])
    with pytest.raises(ValueError, match="increasing"):
        staged_manifold(flow_mc, tau, [2, 5, 3, 6], [0, 1, 2])
    with pytest.raises(ValueError, match="interior"):
        staged_manifold(flow_mc, tau, [0, 3, 5, 6], [0, 1, 2])
    with pytest.raises(ValueError, match="distinct"):
        staged_manifold(flow_mc, tau, [2, 3, 5, 6], [0, 1, 1])
    with pytest.raises(ValueError, match="driving"):
        staged_manifold(flow_mc, tau, [2, 3, 5, 6], [0, 1, 3])
    with pytest.raises(ValueError, match="angles"):
        staged_manifold(flow_mc, tau, [2, 3, 5, 6], [0, 1, 2], turn_degrees=(0.0, 45.0))
    with pytest.raises(ValueError, match="angles"):
        staged_manifold(flow_mc, tau, [2, 3, 5, 6], [0, 1, 2], turn_degrees=(35.0, 120.0))
    with pytest.raises(FittingError, match="increase toward the far end"):
        staged_manifold(flow_mc, tau, [2, 3, 5, 6], [0, 1, 2], far_target=0.0)


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


def test_fit_u_one_dimensional_reproduces_ratios():
    spec = AffineModelSpec(np.array([0.5]), np.array([1.0]), np.array([0.3]), 2.0)
    flow = RiccatiFlow(spec)
    tenor = TenorStructure(dates=np.linspace(0.0, 2.0, 5), tenors={"6M": 1})
    B = _discount_curve(tenor.dates)
    init = InitialTermStructure(tenor=tenor, ois_discount=B, libor={"6M": np.full(4, 0.03)})
    u, s = fit_u_sequence(flow, init, line_manifold(np.array([2.0])))
    tau = init.log_ratio_targets()
    for l in range(5):
        got = math.log(martingale_value(flow, u[l], 0.0, spec.x0))
        assert got == pytest.approx(tau[l], rel=1e-10, abs=1e-12)
    assert np.all(np.diff(u[:, 0]) < 0)  # strictly decreasing for positive rates
    assert u[-1, 0] == 0.0
    assert np.all(np.diff(s) > 0)


def test_fit_u_flat_curve_collapses_to_origin(flow_mc, tenor8, manifold_line):
    init = InitialTermStructure(
        tenor=tenor8, ois_discount=np.ones(9), libor={"3M": np.zeros(8)}
    )
    u, s = fit_u_sequence(flow_mc, init, manifold_line)
    assert_allclose(u, np.zeros((9, 3)), atol=0.0)
    assert_allclose(s, manifold_line.s_max)


def test_fit_u_ties_reuse_previous_vector(flow_mc, tenor8, manifold_line):
    B = _discount_curve(tenor8.dates)
    B[3] = B[2]  # a flat stretch
    init = InitialTermStructure(tenor=tenor8, ois_discount=B, libor={})
    u, s = fit_u_sequence(flow_mc, init, manifold_line)
    assert np.array_equal(u[3], u[2])
    assert s[3] == s[2]
    assert np.all(u[4, 0] < u[3, 0])


def test_fit_u_unreachable_target_raises(flow_mc, init8):
    tiny = line_manifold(np.array([0.002, 0.002, 0.002]))
    with pytest.raises(FittingError, match="maturity"):
        fit_u_sequence(flow_mc, init8, tiny)


def test_fit_v_positive_spreads_dominate(flow_mc, init8, seq8):
    for x in ("3M", "6M"):
        sub = seq8.tenor.sub_indices(x)
        v, s_v = seq8.v[x], seq8.s_v[x]
        u_sub, s_sub = seq8.u[sub], seq8.s_u[sub]
        n_x = seq8.tenor.n_sub(x)
        assert np.all(v[:-1] >= u_sub[:-1])
        # strictly beyond u in the manifold parameter for k = 0..N^x-1
        assert np.all(s_v[:-1] < s_sub[:-1])
        assert np.all(np.linalg.norm(v[:-1] - u_sub[:-1], axis=1) > 0)
        # the convention entry repeats the final LIBOR target
        assert_allclose(v[n_x], v[n_x - 1], rtol=0, atol=1e-9)


def test_fit_v_round_trip_reproduces_libor(flow_mc, spec_mc, init8, seq8):
    for x in ("3M", "6M"):
        for k in range(1, seq8.tenor.n_sub(x) + 1):
            got = libor_rate(flow_mc, seq8, x, k, 0.0, spec_mc.x0)
            want = init8.libor[x][k - 1]
            assert got == pytest.approx(want, rel=1e-9, abs=1e-12)


def test_fit_v_zero_spreads_reuse_u_exactly(flow_mc, tenor8, manifold_line):
    B = _discount_curve(tenor8.dates)
    libor = {}
    for x in ("3M", "6M"):
        sub = np.arange(0, 9, tenor8.tenors[x])
        Bx = B[sub]
        libor[x] = (Bx[:-1] / Bx[1:] - 1.0) / tenor8.delta_x(x)
    init = InitialTermStructure(tenor=tenor8, ois_discount=B, libor=libor)
    seq = calibrate(flow_mc, init, manifold_line)
    for x in ("3M", "6M"):
        sub = tenor8.sub_indices(x)
        n_x = tenor8.n_sub(x)
        # identical fitting targets: bitwise reuse below the final index
        assert np.array_equal(seq.v[x][:-1], seq.u[sub][:-1])
        # the convention entry equals the previous one (same target), not u_N = 0
        assert_allclose(seq.v[x][n_x], seq.v[x][n_x - 1], rtol=0, atol=1e-9)


def test_fit_v_spread_violation_raises(flow_mc, tenor8, manifold_line):
    B = _discount_curve(tenor8.dates)
    sub = tenor8.sub_indices("6M")
    Bx = B[sub]
    fwd = (Bx[:-1] / Bx[1:] - 1.0) / tenor8.delta_x("6M")
    bad = fwd.copy()
    bad[1] -= 0.01
    init = InitialTermStructure(tenor=tenor8, ois_discount=B, libor={"6M": bad})
    u, s_u = fit_u_sequence(flow_mc, init, manifold_line)
    with pytest.raises(FittingError, match="spread"):
        fit_v_sequences(flow_mc, init, manifold_line, u, s_u)


def test_calibrated_sequences_validation(tenor8, manifold_line, flow_mc, init8, seq8):
    u = seq8.u.copy()
    u[-1] = 0.1  # violates the terminal normalization
    with pytest.raises(ValueError):
        CalibratedSequences(
            tenor=tenor8, manifold=manifold_line, u=u, s_u=seq8.s_u, v={}, s_v={}
        )
    bad_v = {x: np.zeros_like(v) for x, v in seq8.v.items()}  # v < u
    with pytest.raises(ValueError):
        CalibratedSequences(
            tenor=tenor8,
            manifold=manifold_line,
            u=seq8.u,
            s_u=seq8.s_u,
            v=bad_v,
            s_v=seq8.s_v,
        )


# ---------------------------------------------------------------------------
# martingales and rates
# ---------------------------------------------------------------------------


def test_martingale_trivial_values(flow_mc, spec_mc):
    assert martingale_value(flow_mc, np.zeros(3), 0.7, spec_mc.x0) == 1.0
    u = np.array([0.3, 0.1, 0.2])
    x = np.array([1.1, 0.9, 1.3])
    assert martingale_value(flow_mc, u, 2.0, x) == pytest.approx(np.exp(u @ x), rel=1e-12)


def test_martingale_at_least_one_for_nonnegative_arguments(flow_mc, seq8):
    rng = np.random.default_rng(31)
    states = rng.uniform(0.0, 2.5, size=(50, 3))
    for u in (seq8.u[0], seq8.u[3], seq8.v["6M"][1]):
        vals = martingale_value(flow_mc, u, 0.9, states)
        assert np.all(vals >= 1.0)


def test_martingale_property_monte_carlo(flow_mc, spec_mc, seq8):
    """Sample means of M^u and M^v are constant in t (3 standard errors)."""
    grid = np.array([0.0, 0.5, 1.0, 1.5])
    paths = simulate_paths(spec_mc, grid, 30_000, seed=55)
    for u in (seq8.u[2], seq8.v["6M"][1]):
        m0 = float(martingale_value(flow_mc, u, 0.0, spec_mc.x0))
        for li in range(1, len(grid)):
            vals = martingale_value(flow_mc, u, grid[li], paths.states[li])
            se = vals.std(ddof=1) / math.sqrt(vals.size)
            assert abs(vals.mean() - m0) < 3.0 * se


def test_martingale_telescoping_in_log_space(flow_mc, seq8, spec_mc):
    """log(M^{u_i}/M^{u_k}) equals the sum of consecutive log ratios."""
    t, x = 0.7, np.array([1.2, 0.8, 1.1])
    logs = [math.log(martingale_value(flow_mc, seq8.u[l], t, x)) for l in range(9)]
    for i in range(0, 6):
        for k in range(i + 1, 9):
            direct = logs[i] - logs[k]
            chained = sum(logs[j - 1] - logs[j] for j in range(i + 1, k + 1))
            assert direct == pytest.approx(chained, abs=1e-12)


def test_rates_reproduce_initial_curves(flow_mc, spec_mc, init8, seq8):
    for x in ("3M", "6M"):
        fwd0 = init8.ois_forward(x)
        for k in (1, seq8.tenor.n_sub(x)):
            F = ois_forward_rate(flow_mc, seq8, x, k, 0.0, spec_mc.x0)
            assert F == pytest.approx(fwd0[k - 1], rel=1e-9, abs=1e-12)
            S = spread(flow_mc, seq8, x, k, 0.0, spec_mc.x0)
            assert S == pytest.approx(init8.spreads(x)[k - 1], rel=1e-6, abs=1e-12)


def test_rates_nonnegative_on_sampled_states(flow_mc, spec_mc, seq8):
    rng = np.random.default_rng(17)
    states = rng.uniform(0.05, 2.5, size=(40, 3))
    for x, k, t in (("3M", 3, 0.6), ("6M", 2, 0.7), ("6M", 4, 1.6)):
        F = ois_forward_rate(flow_mc, seq8, x, k, t, states)
        S = spread(flow_mc, seq8, x, k, t, states)
        assert np.all(F >= -1e-14)
        assert np.all(S >= -1e-14)


def test_single_curve_degeneracy_zero_spread(flow_mc, tenor8, manifold_line, seq8):
    """Imposing v = u collapses the spread to exactly zero."""
    v = {x: seq8.u[tenor8.sub_indices(x)] for x in ("3M", "6M")}
    s_v = {x: seq8.s_u[tenor8.sub_indices(x)] for x in ("3M", "6M")}
    degen = CalibratedSequences(
        tenor=tenor8, manifold=manifold_line, u=seq8.u, s_u=seq8.s_u, v=v, s_v=s_v
    )
    states = np.random.default_rng(3).uniform(0.0, 2.0, size=(20, 3))
    for x, k, t in (("3M", 2, 0.3), ("6M", 3, 1.2)):
        S = spread(flow_mc, degen, x, k, t, states)
        assert np.all(S == 0.0)


def test_rate_index_and_time_validation(flow_mc, spec_mc, seq8):
    with pytest.raises(IndexError):
        ois_forward_rate(flow_mc, seq8, "6M", 5, 0.0, spec_mc.x0)
    with pytest.raises(IndexError):
        libor_rate(flow_mc, seq8, "6M", 0, 0.0, spec_mc.x0)
    with pytest.raises(ValueError):
        ois_forward_rate(flow_mc, seq8, "6M", 1, 0.6, spec_mc.x0)  # past payment date


# ---------------------------------------------------------------------------
# forward-measure characteristics
# ---------------------------------------------------------------------------


def test_forward_measure_reduces_at_terminal(flow_mc, seq8):
    fmf = forward_measure_characteristics(flow_mc, seq8, "6M", seq8.tenor.n_sub("6M"))
    w = np.array([0.2, -0.1, 0.3])
    phi, psi = fmf.flow_pair(0.8, w)
    plain = flow_mc.solve(0.8, w, gradients=False)
    assert phi == pytest.approx(plain.phi, rel=1e-9, abs=1e-12)
    assert_allclose(psi, plain.psi, rtol=1e-9, atol=1e-12)


def test_forward_measure_zero_argument(flow_mc, seq8):
    fmf = forward_measure_characteristics(flow_mc, seq8, "6M", 2)
    phi, psi = fmf.flow_pair(0.6, np.zeros(3))
    assert phi == 0.0
    assert_allclose(psi, np.zeros(3), atol=0.0)


def test_forward_measure_mgf_against_weighted_monte_carlo(flow_mc, spec_mc, seq8):
    """Forward-measure mgf equals the density-weighted terminal-measure mean."""
    k, x, t = 2, "6M", 0.75
    u_k = seq8.u_at_tenor(x)[k]
    fmf = forward_measure_characteristics(flow_mc, seq8, x, k)
    w = np.array([0.15, -0.2, 0.1])
    analytic = fmf.mgf(t, w)
    paths = simulate_paths(spec_mc, np.array([0.0, 0.25, 0.5, 0.75]), 30_000, seed=99)
    states = paths.states[-1]
    m0 = float(martingale_value(flow_mc, u_k, 0.0, spec_mc.x0))
    weights = martingale_value(flow_mc, u_k, t, states) / m0
    sample = weights * np.exp(states @ w)
    se = sample.std(ddof=1) / math.sqrt(sample.size)
    assert abs(sample.mean() - analytic) < 3.0 * se


def test_forward_measure_index_validation(flow_mc, seq8):
    with pytest.raises(IndexError):
        forward_measure_characteristics(flow_mc, seq8, "6M", 9)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def test_csv_round_trip(tmp_path, tenor8, init8):
    disc = tmp_path / "ois.csv"
    rows = ["maturity_years,discount_factor"]
    rows += [
        f"{m:.17g},{b:.17g}" for m, b in zip(tenor8.dates[1:], init8.ois_discount[1:])
    ]
    disc.write_text("\n".join(rows) + "\n")
    lib = tmp_path / "libor.csv"
    rows = ["tenor,maturity_years,libor_rate"]
    for x in ("3M", "6M"):
        rows += [
            f"{x},{m:.17g},{r:.17g}"
            for m, r in zip(tenor8.sub_dates(x)[1:], init8.libor[x])
        ]
    lib.write_text("\n".join(rows) + "\n")

    loaded = initial_term_structure_from_csv(tenor8, disc, lib)
    assert_allclose(loaded.ois_discount, init8.ois_discount, rtol=0, atol=0)
    for x in ("3M", "6M"):
        assert_allclose(loaded.libor[x], init8.libor[x], rtol=0, atol=0)


def test_csv_error_handling(tmp_path, tenor8):
    missing = tmp_path / "nope.csv"
    with pytest.raises(ScenarioError, match="not found"):
        load_discount_csv(missing)
    bad_cols = tmp_path / "bad.csv"
    bad_cols.write_text("maturity,df\n1.0,0.99\n")
    with pytest.raises(ScenarioError, match="missing columns"):
        load_discount_csv(bad_cols)
    non_numeric = tmp_path / "nn.csv"
    non_numeric.write_text("maturity_years,discount_factor\nabc,0.99\n")
    with pytest.raises(ScenarioError, match="non-numeric"):
        load_discount_csv(non_numeric)
    wrong_grid = tmp_path / "grid.csv"
    rows = ["maturity_years,discount_factor"] + ["0.3,0.99"]
    wrong_grid.write_text("\n".join(rows) + "\n")
    lib = tmp_path / "lib.csv"
    lib.write_text("tenor,maturity_years,libor_rate\n3M,0.25,0.02\n")
    with pytest.raises(ScenarioError, match="do not match"):
        initial_term_structure_from_csv(tenor8, wrong_grid, lib)
