"""Continuous-maturity extension of the calibrated discrete curves.

The calibration produces martingale parameter vectors ``u_l`` only at the
tenor dates.  This module interpolates them to a continuous, componentwise
non-increasing map ``T -> U(T)`` on ``[0, T_N]``, which defines bond prices
for every maturity, instantaneous forward rates, the induced short rate, and
the rolling spot measure used for pathwise discounting.

Four interpolation kinds are provided:

* ``"linear"`` -- componentwise piecewise-linear in maturity.
* ``"spline-hybrid"`` -- cubic splines on stretches where a single component
  moves, clamped to the neighbouring chord slopes, linear elsewhere; falls
  back to the monotone kind when the spline overshoots.
* ``"monotone"`` -- componentwise monotone C^1 (PCHIP) in maturity.
* ``"curve-fit"`` -- maturity is mapped into the calibration manifold so
  that the model reproduces a prescribed instantaneous forward curve
  ``f~(0, T)`` exactly (up to a fitting tolerance) at time zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicHermiteSpline, CubicSpline, PchipInterpolator, PPoly
from scipy.optimize import brentq

from .affine import (
    AffineModelSpec,
    PathGrid,
    RiccatiFlow,
    simulate_paths,
    solve_riccati_inhomogeneous,
)
from .errors import FittingError
from .multicurve import CalibratedSequences, InitialTermStructure, Manifold, _bisect_log_targets

_KIND_ALIASES = {
    "if1": "curve-fit",
    "if2": "linear",
    "if3": "spline-hybrid",
    "if4": "monotone",
}
INTERPOLATION_KINDS = ("curve-fit", "linear", "spline-hybrid", "monotone")

_DATE_TOL = 1e-9
_FIT_RESIDUAL_TOL = 5e-10
_MAX_REFINES = 8


# ---------------------------------------------------------------------------
# initial instantaneous forward curves
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NelsonSiegelCurve:
    """Three-factor exponential family for the initial forward curve.

    ``f(T) = beta0 + beta1 exp(-T/decay) + beta2 (T/decay) exp(-T/decay)``.
    """

    beta0: float
    beta1: float
    beta2: float
    decay: float

    def __post_init__(self):
        if self.decay <= 0:
            raise ValueError("decay must be positive")

    def value(self, t):
        t = np.asarray(t, dtype=float)
        y = t / self.decay
        e = np.exp(-y)
        return self.beta0 + self.beta1 * e + self.beta2 * y * e

    def antiderivative(self, t):
        """Exact ``int_0^t f(s) ds``."""
        t = np.asarray(t, dtype=float)
        y = t / self.decay
        e = np.exp(-y)
        return (
            self.beta0 * t
            + self.beta1 * self.decay * (1.0 - e)
            + self.beta2 * self.decay * (1.0 - e * (1.0 + y))
        )

    def integral(self, a, b):
        return self.antiderivative(b) - self.antiderivative(a)


@dataclass(frozen=True)
class TableForwardCurve:
    """Piecewise-linear forward curve through tabulated points.

    Constant extrapolation outside the table; the antiderivative is exact
    for the piecewise-linear interpolant.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape or times.size < 2:
            raise ValueError("need matching 1-d tables with at least two points")
        if np.any(np.diff(times) <= 0):
            raise ValueError("table times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def value(self, t):
        return np.interp(np.asarray(t, dtype=float), self.times, self.values)

    @cached_property
    def _cumulative(self) -> np.ndarray:
        return cumulative_trapezoid(self.values, self.times, initial=0.0)

    def antiderivative(self, t):
        t = np.asarray(t, dtype=float)
        tc = np.clip(t, self.times[0], self.times[-1])
        idx = np.clip(np.searchsorted(self.times, tc, side="right") - 1, 0, self.times.size - 2)
        left = self.times[idx]
        # within a cell the integrand is linear, so the trapezoid is exact
        inner = self._cumulative[idx] + 0.5 * (self.values[idx] + self.value(tc)) * (tc - left)
        below = self.values[0] * np.minimum(t - self.times[0], 0.0)
        above = self.values[-1] * np.maximum(t - self.times[-1], 0.0)
        return inner + below + above

    def integral(self, a, b):
        return self.antiderivative(b) - self.antiderivative(a)


def verify_forward_curve_consistency(
    curve, init: InitialTermStructure, tol: float = 1e-8
) -> float:
    """Check ``exp(-int_0^{T_k} f) = B(0, T_k)`` at every tenor date.

    Returns:
        The maximum absolute deviation.

    Raises:
        FittingError: when the deviation exceeds ``tol``.
    """
    implied = np.exp(-np.asarray(curve.antiderivative(init.tenor.dates), dtype=float))
    dev = np.max(np.abs(implied - init.ois_discount))
    if dev > tol:
        worst = int(np.argmax(np.abs(implied - init.ois_discount)))
        raise FittingError(
            f"forward curve is inconsistent with the discount factors: "
            f"max deviation {dev:.3e} at T_{worst} (tolerance {tol:g})"
        )
    return float(dev)


# ---------------------------------------------------------------------------
# maturity interpolation of the fitted vectors
# ---------------------------------------------------------------------------


class UCurve:
    """Continuous extension ``T -> U(T)`` of the fitted vectors.

    Attributes:
        kind: canonical interpolation kind.
        dates: tenor dates (the interpolation knots).
        knots: fitted vectors at the tenor dates, shape (N+1, d).
        monotone_fallback: True when a spline-hybrid build was replaced by
            the monotone kind because the spline lost monotonicity.
    """

    kind: str = ""
    monotone_fallback: bool = False

    def __init__(self, dates: np.ndarray, knots: np.ndarray):
        self.dates = np.asarray(dates, dtype=float)
        self.knots = np.asarray(knots, dtype=float)

    # -- shared helpers ----------------------------------------------------

    def _check_range(self, T: np.ndarray) -> np.ndarray:
        T = np.asarray(T, dtype=float)
        lo, hi = self.dates[0], self.dates[-1]
        if np.any(T < lo - _DATE_TOL) or np.any(T > hi + _DATE_TOL):
            raise ValueError(f"maturity outside [{lo:g}, {hi:g}]")
        return np.clip(T, lo, hi)

    def value(self, T):
        """``U(T)``, shape ``T.shape + (d,)``."""
        T = self._check_range(T)
        out = self._value(np.atleast_1d(T))
        return out[0] if T.ndim == 0 else out

    def derivative(self, T):
        """``U'(T)`` (right derivative at the knots), shape like ``value``."""
        T = self._check_range(T)
        out = self._derivative(np.atleast_1d(T))
        return out[0] if T.ndim == 0 else out

    @property
    def is_c1(self) -> bool:
        raise NotImplementedError

    def _value(self, T: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _derivative(self, T: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class _LinearUCurve(UCurve):
    kind = "linear"

    def __init__(self, dates, knots):
        super().__init__(dates, knots)
        self._slopes = np.diff(self.knots, axis=0) / np.diff(self.dates)[:, None]

    def _value(self, T):
        return np.stack(
            [np.interp(T, self.dates, self.knots[:, j]) for j in range(self.knots.shape[1])],
            axis=-1,
        )

    def _derivative(self, T):
        idx = np.clip(np.searchsorted(self.dates, T, side="right") - 1, 0, len(self.dates) - 2)
        return self._slopes[idx]

    @property
    def is_c1(self) -> bool:
        jumps = np.abs(np.diff(self._slopes, axis=0))
        scale = max(1.0, float(np.max(np.abs(self._slopes))))
        return bool(np.all(jumps <= 1e-9 * scale))


class _MonotoneUCurve(UCurve):
    kind = "monotone"

    def __init__(self, dates, knots):
        super().__init__(dates, knots)
        self._interp = [
            PchipInterpolator(self.dates, self.knots[:, j]) for j in range(self.knots.shape[1])
        ]
        self._deriv = [p.derivative() for p in self._interp]

    def _value(self, T):
        return np.stack([p(T) for p in self._interp], axis=-1)

    def _derivative(self, T):
        return np.stack([p(T) for p in self._deriv], axis=-1)

    @property
    def is_c1(self) -> bool:
        return True


class _HybridUCurve(UCurve):
    """Per-component piecewise polynomial: cubic on single-component
    stretches (clamped to the adjacent chord slopes), linear elsewhere."""

    kind = "spline-hybrid"

    def __init__(self, dates, knots, polys: list[PPoly]):
        super().__init__(dates, knots)
        self._polys = polys
        self._derivs = [p.derivative() for p in polys]

    def _value(self, T):
        return np.stack([p(T) for p in self._polys], axis=-1)

    def _derivative(self, T):
        return np.stack([p(T) for p in self._derivs], axis=-1)

    @property
    def is_c1(self) -> bool:
        scale = max(1.0, float(np.max(np.abs(self.knots))))
        for dp in self._derivs:
            h = np.diff(self.dates)
            # left limit at each interior knot from the previous interval
            powers = h[:-1][None, :] ** np.arange(dp.c.shape[0] - 1, -1, -1)[:, None]
            left = np.sum(dp.c[:, :-1] * powers, axis=0)
            right = dp.c[-1, 1:]
            if np.max(np.abs(left - right)) > 1e-9 * scale:
                return False
        return True


def _build_hybrid(dates: np.ndarray, knots: np.ndarray) -> UCurve:
    """Assemble the spline-hybrid interpolant, falling back when needed."""
    n_int = len(dates) - 1
    d = knots.shape[1]
    deltas = np.diff(knots, axis=0)
    scale = max(1.0, float(np.max(np.abs(knots))))
    active = np.abs(deltas) > 1e-13 * scale  # (n_int, d)
    single = active.sum(axis=1) == 1

    polys: list[PPoly] = []
    for j in range(d):
        coeffs = np.zeros((4, n_int))
        slopes = deltas[:, j] / np.diff(dates)
        coeffs[3] = knots[:-1, j]
        coeffs[2] = slopes
        # maximal runs of consecutive intervals where only component j moves
        run_start = None
        for l in range(n_int + 1):
            in_run = l < n_int and single[l] and active[l, j]
            if in_run and run_start is None:
                run_start = l
            elif not in_run and run_start is not None:
                a, b = run_start, l  # intervals a..b-1
                if a == 0:
                    bc_left = "natural"
                else:
                    bc_left = (1, slopes[a - 1])
                if b == n_int:
                    bc_right = "natural"
                else:
                    bc_right = (1, slopes[b])
                cs = CubicSpline(dates[a : b + 1], knots[a : b + 1, j], bc_type=(bc_left, bc_right))
                coeffs[:, a:b] = cs.c
                run_start = None
        polys.append(PPoly(coeffs, dates))

    hybrid = _HybridUCurve(dates, knots, polys)
    # the construction interpolates; verify it kept componentwise monotonicity
    probe = np.linspace(dates[0], dates[-1], 1 + 32 * n_int)
    dv = hybrid._derivative(probe)
    if np.any(dv > 1e-10 * scale):
        fallback = _MonotoneUCurve(dates, knots)
        fallback.kind = "spline-hybrid"
        fallback.monotone_fallback = True
        return fallback
    return hybrid


class _CurveFitUCurve(UCurve):
    """Maturity mapped through the manifold to match a forward curve.

    The parameter map ``s(T)`` solves ``log M_0^{g(s(T))} = int_T^{T_N} f``
    on a refined grid and is interpolated monotonically in between;
    ``U(T) = g(s(T))``.
    """

    kind = "curve-fit"

    def __init__(self, dates, knots, manifold, flow, curve, grid, s_grid, ds_grid, max_residual):
        super().__init__(dates, knots)
        self.manifold = manifold
        self._flow = flow
        self._curve = curve
        self.fit_grid = grid
        self.fit_parameters = s_grid
        self.max_residual = float(max_residual)
        self._s_of_T = CubicHermiteSpline(grid, s_grid, ds_grid)

    def _value(self, T):
        s = np.clip(self._s_of_T(T), 0.0, self.manifold.s_max)
        return self.manifold.point_many(s)

    def _derivative(self, T):
        s = np.clip(self._s_of_T(T), 0.0, self.manifold.s_max)
        pts = self.manifold.point_many(s)
        tangents = np.stack([self.manifold.tangent(si) for si in s])
        sols = self._flow.pairs(pts, np.full(len(s), self._flow.spec.horizon), gradients=True)
        grad_h = sols["grad_phi"] + np.einsum(
            "kij,i->kj", sols["jac_psi"], self._flow.spec.x0
        )
        pace = np.einsum("kj,kj->k", grad_h, tangents)  # dh/ds < 0 off the origin
        f_here = np.asarray(self._curve.value(T), dtype=float)
        return tangents * (-f_here / pace)[:, None]

    @property
    def is_c1(self) -> bool:
        return self.manifold.is_c1

    def residuals(self, T) -> np.ndarray:
        """Defining-equation residual ``log M_0^{U(T)} - int_T^{T_N} f``."""
        T = self._check_range(T)
        pts = self._value(np.atleast_1d(T))
        target = self._curve.integral(T, self.dates[-1])
        return self._flow.log_m0(pts) - np.atleast_1d(target)


def _fit_curve_parameterization(
    flow: RiccatiFlow,
    manifold: Manifold,
    curve,
    dates: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Solve ``s(T)`` and its slope on an adaptively refined maturity grid.

    The slope is analytic -- differentiating the defining equation gives
    ``s'(T) = -f(T) / <grad H(g(s)), g'(s)>`` -- so a cubic Hermite
    interpolant converges at fourth order between the solved points.
    """
    horizon = dates[-1]
    lag = flow.spec.horizon
    grid = np.unique(
        np.concatenate([np.linspace(a, b, 5) for a, b in zip(dates[:-1], dates[1:])])
    )
    far = float(flow.log_m0(manifold.far_point[None, :])[0])
    top = float(np.max(np.asarray(curve.integral(grid, horizon), dtype=float)))
    if far < top:
        raise FittingError(
            f"manifold far end reaches {far:.6g} < required {top:.6g}; extend the far point"
        )

    # s(T) loses C^2 smoothness where the manifold's curvature jumps, so the
    # grid pins the corresponding maturities; between them the Hermite
    # interpolant keeps its full fourth order.
    junctions = manifold.junction_parameters
    if junctions.size:
        v_junc = flow.log_m0(manifold.point_many(junctions))
        t_junc = [
            brentq(
                lambda T, vj=vj: float(curve.integral(T, horizon)) - vj,
                0.0,
                horizon,
                xtol=1e-13,
            )
            for vj in v_junc
            if 1e-12 < vj < top - 1e-12
        ]
        if t_junc:
            grid = np.unique(np.concatenate([grid, t_junc]))

    def solve_on(T: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        targets = np.asarray(curve.integral(T, horizon), dtype=float)
        s = np.full(T.shape, manifold.s_max)
        open_idx = targets > 1e-15
        if np.any(open_idx):
            k = int(open_idx.sum())
            s[open_idx] = _bisect_log_targets(
                flow, manifold, targets[open_idx], np.zeros(k), np.full(k, manifold.s_max)
            )
        pts = manifold.point_many(s)
        sols = flow.pairs(pts, np.full(len(s), lag), gradients=True)
        grad_h = sols["grad_phi"] + np.einsum("kij,i->kj", sols["jac_psi"], flow.spec.x0)
        tangents = np.stack([manifold.tangent(si) for si in s])
        pace = np.einsum("kj,kj->k", grad_h, tangents)
        ds = -np.asarray(curve.value(T), dtype=float) / pace
        return s, ds

    s_grid, ds_grid = solve_on(grid)
    worst = math.inf
    for _ in range(_MAX_REFINES):
        interp = CubicHermiteSpline(grid, s_grid, ds_grid)
        check = 0.5 * (grid[:-1] + grid[1:])
        pts = manifold.point_many(np.clip(interp(check), 0.0, manifold.s_max))
        resid = np.abs(flow.log_m0(pts) - curve.integral(check, horizon))
        worst = float(np.max(resid))
        if worst < _FIT_RESIDUAL_TOL:
            break
        bad = check[resid >= 0.5 * _FIT_RESIDUAL_TOL]
        s_bad, ds_bad = solve_on(bad)
        order = np.argsort(np.concatenate([grid, bad]))
        grid = np.concatenate([grid, bad])[order]
        s_grid = np.concatenate([s_grid, s_bad])[order]
        ds_grid = np.concatenate([ds_grid, ds_bad])[order]
    if np.any(ds_grid < 0.0):
        raise FittingError("curve-fit parameterization is not increasing in maturity")
    return grid, s_grid, ds_grid, worst


def interpolate_vectors(
    seq: CalibratedSequences,
    kind: str,
    *,
    flow: RiccatiFlow | None = None,
    forward_curve=None,
) -> UCurve:
    """Build the continuous extension ``U`` of the fitted vectors.

    Args:
        seq: calibrated discrete sequences.
        kind: one of ``INTERPOLATION_KINDS`` or the short aliases
            ``"if1"``/``"if2"``/``"if3"``/``"if4"``.
        flow: required for ``"curve-fit"``.
        forward_curve: initial instantaneous forward curve, required for
            ``"curve-fit"``; it should be consistent with the discount
            factors (see ``verify_forward_curve_consistency``).

    Returns:
        A ``UCurve``; its ``kind`` attribute is the canonical name.
    """
    canonical = _KIND_ALIASES.get(kind.lower(), kind.lower())
    if canonical not in INTERPOLATION_KINDS:
        raise ValueError(f"unknown interpolation kind {kind!r}")
    dates, knots = seq.tenor.dates, seq.u
    if canonical == "linear":
        return _LinearUCurve(dates, knots)
    if canonical == "monotone":
        return _MonotoneUCurve(dates, knots)
    if canonical == "spline-hybrid":
        return _build_hybrid(dates, knots)
    if flow is None or forward_curve is None:
        raise ValueError("curve-fit interpolation needs a flow and a forward curve")
    grid, s_grid, ds_grid, worst = _fit_curve_parameterization(
        flow, seq.manifold, forward_curve, dates
    )
    return _CurveFitUCurve(
        dates, knots, seq.manifold, flow, forward_curve, grid, s_grid, ds_grid, worst
    )


# ---------------------------------------------------------------------------
# bonds, forward rates and the short rate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShortRateTables:
    """Precomputed affine coefficients along a time grid.

    ``P_l, Q_l`` give ``log M_{t_l}^{U(t_l)} = P_l + <Q_l, x>``; ``p_l, q_l``
    give the short rate ``r_{t_l} = p_l + <q_l, x>``.
    """

    times: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    p: np.ndarray
    q: np.ndarray


class TermStructure:
    """Bond prices and short-rate structure induced by an interpolation.

    Wraps a Riccati flow and a ``UCurve``; all maturities live in
    ``[0, T_N]`` where ``T_N`` is the flow's horizon.
    """

    def __init__(self, flow: RiccatiFlow, ucurve: UCurve):
        if abs(ucurve.dates[-1] - flow.spec.horizon) > _DATE_TOL:
            raise ValueError("interpolation horizon differs from the model horizon")
        self.flow = flow
        self.ucurve = ucurve

    @property
    def spec(self) -> AffineModelSpec:
        return self.flow.spec

    @property
    def horizon(self) -> float:
        return float(self.spec.horizon)

    # -- prices ------------------------------------------------------------

    def log_bond_price(self, t: float, T, x) -> np.ndarray:
        """``log B(t, T) = log M_t^{U(T)} - log M_t^{U(t)}``.

        Args:
            t: observation time.
            T: maturities in ``[t, T_N]``, scalar or (m,).
            x: states, (d,) or (n, d).

        Returns:
            Shape (m,), (n,), or (n, m) following the batched inputs.
        """
        T_arr = np.atleast_1d(np.asarray(T, dtype=float))
        if np.any(T_arr < t - _DATE_TOL):
            raise ValueError("maturity before observation time")
        x_arr = np.atleast_2d(np.asarray(x, dtype=float))
        args = np.vstack([self.ucurve.value(T_arr), self.ucurve.value(float(t))[None, :]])
        sols = self.flow.pairs(args, self.horizon - t)
        log_m = sols["phi"][None, :] + x_arr @ sols["psi"].T  # (n, m+1)
        out = log_m[:, :-1] - log_m[:, -1:]
        if np.asarray(x, dtype=float).ndim == 1:
            out = out[0]
        if np.asarray(T, dtype=float).ndim == 0:
            out = out[..., 0]
        return out

    def bond_price(self, t: float, T, x):
        """Zero-coupon bond ``B(t, T)`` (see ``log_bond_price`` for shapes)."""
        return np.exp(self.log_bond_price(t, T, x))

    # -- rates ---------------------------------------------------------------

    def forward_rate_coefficients(self, t: float, T) -> tuple[np.ndarray, np.ndarray]:
        """Affine coefficients of ``f(t, T, x) = p + <q, x>``.

        Returns:
            ``(p, q)`` with shapes (m,) and (m, d) for maturities ``T``.
        """
        T_arr = np.atleast_1d(np.asarray(T, dtype=float))
        pts = self.ucurve.value(T_arr)
        du = self.ucurve.derivative(T_arr)
        sols = self.flow.pairs(pts, self.horizon - t, gradients=True)
        p = -np.einsum("kj,kj->k", sols["grad_phi"], du)
        q = -np.einsum("kij,kj->ki", sols["jac_psi"], du)
        return p, q

    def instantaneous_forward_rate(self, t: float, T, x):
        """``f(t, T) = -d/dT log B(t, T)`` evaluated at states ``x``."""
        p, q = self.forward_rate_coefficients(t, T)
        x_arr = np.atleast_2d(np.asarray(x, dtype=float))
        out = p[None, :] + x_arr @ q.T
        if np.asarray(x, dtype=float).ndim == 1:
            out = out[0]
        if np.asarray(T, dtype=float).ndim == 0:
            out = out[..., 0]
        return out

    def short_rate(self, t: float, x):
        """``r_t = f(t, t)``."""
        return self.instantaneous_forward_rate(t, float(t), x)

    def coefficient_tables(self, times: np.ndarray) -> ShortRateTables:
        """Batched ``P, Q, p, q`` along a grid (one stacked solve)."""
        times = np.asarray(times, dtype=float)
        if np.any(times < -_DATE_TOL) or np.any(times > self.horizon + _DATE_TOL):
            raise ValueError("times outside [0, horizon]")
        pts = self.ucurve.value(times)
        du = self.ucurve.derivative(times)
        sols = self.flow.pairs(pts, self.horizon - times, gradients=True)
        p = -np.einsum("kj,kj->k", sols["grad_phi"], du)
        q = -np.einsum("kij,kj->ki", sols["jac_psi"], du)
        return ShortRateTables(times=times, P=sols["phi"], Q=sols["psi"], p=p, q=q)

    # -- spot measure --------------------------------------------------------

    @cached_property
    def _dense_tables(self) -> ShortRateTables:
        grid = np.linspace(0.0, self.horizon, 1 + 4 * max(80, 8 * (len(self.ucurve.dates) - 1)))
        return self.coefficient_tables(grid)

    def _interp_dense(self, t: float, field: np.ndarray) -> np.ndarray:
        grid = self._dense_tables.times
        if field.ndim == 1:
            return np.interp(t, grid, field)
        return np.stack([np.interp(t, grid, field[:, j]) for j in range(field.shape[1])], axis=-1)

    def numeraire_psi(self, t) -> np.ndarray:
        """``Q_t = psi_{T_N - t}(U(t))`` from the dense table (interpolated)."""
        return self._interp_dense(t, self._dense_tables.Q)

    def spot_drift_modifier(self) -> Callable[[float], np.ndarray]:
        """Drift correction ``t -> diag(eta_i^2 Q_{t,i})`` for spot-measure
        simulation (the linear coefficients become ``-lam_i + eta_i^2
        Q_{t,i}``)."""
        eta2 = self.spec.vol_scale**2

        def modifier(t: float) -> np.ndarray:
            return np.diag(eta2 * self.numeraire_psi(t))

        return modifier

    def short_rate_integrand(self) -> Callable[[float], tuple[float, np.ndarray]]:
        """Affine map ``t -> (p_t, q_t)`` with ``r_t = p_t + <q_t, x>``,
        interpolated from the dense coefficient tables."""
        tables = self._dense_tables

        def integrand(t: float) -> tuple[float, np.ndarray]:
            return float(self._interp_dense(t, tables.p)), self._interp_dense(t, tables.q)

        return integrand

    def log_measure_density(self, t: float, x, integrated_r) -> np.ndarray:
        """Log density of the rolling spot measure w.r.t. the horizon
        forward measure on the time-``t`` sigma-field:
        ``P_t + <Q_t, x> + int_0^t r - log M_0^{U(0)}``."""
        sol = self.flow.solve(self.horizon - t, self.ucurve.value(float(t)), gradients=False)
        log_m0 = float(self.flow.log_m0(self.ucurve.value(0.0)[None, :])[0])
        x_was_flat = np.asarray(x).ndim == 1
        x_arr = np.atleast_2d(np.asarray(x, dtype=float))
        out = sol.phi + x_arr @ sol.psi + np.asarray(integrated_r, dtype=float) - log_m0
        return out[0] if x_was_flat else out

    def simulate(
        self,
        grid: np.ndarray,
        n_paths: int,
        seed: int,
        *,
        measure: str = "terminal",
        scheme: str | None = None,
        substeps: int = 4,
    ) -> PathGrid:
        """Simulate driver paths with the short rate recorded along them.

        Terminal measure defaults to the exact transition scheme; the spot
        measure requires Euler (the drift correction is state-dependent in
        law) and accumulates ``int r`` at substep resolution.
        """
        if measure == "terminal":
            scheme = scheme or "exact"
            modifier = None
        elif measure == "spot":
            scheme = scheme or "euler"
            modifier = self.spot_drift_modifier()
        else:
            raise ValueError(f"unknown measure {measure!r}")
        return simulate_paths(
            self.spec,
            grid,
            n_paths,
            seed,
            scheme=scheme,
            drift_modifier=modifier,
            substeps=substeps,
            integrand=self.short_rate_integrand(),
            measure=measure,
        )


# ---------------------------------------------------------------------------
# spot-measure characteristics of the driver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpotCharacteristics:
    """Time-dependent characteristics of the driver under the spot measure.

    ``F*(t, w) = F(w + Q_t) - F(Q_t)`` and likewise for ``R*``; ``Q_t`` is
    interpolated from the term structure's dense table.
    """

    term: TermStructure

    def F(self, t: float, w: np.ndarray) -> float:
        spec = self.term.spec
        q = self.term.numeraire_psi(t)
        return float(spec.F(w + q) - spec.F(q))

    def R(self, t: float, w: np.ndarray) -> np.ndarray:
        spec = self.term.spec
        q = self.term.numeraire_psi(t)
        return spec.R(w + q) - spec.R(q)


def short_rate_mgf(term: TermStructure, w: float, s: float, t: float, x_s) -> np.ndarray:
    """``E*[exp(w r_t) | X_s = x_s]`` under the spot measure.

    Uses ``r_t = p_t + <q_t, X_t>`` and the inhomogeneous Riccati flow of the
    spot-measure characteristics between ``s`` and ``t``.
    """
    if not 0.0 <= s <= t <= term.horizon + _DATE_TOL:
        raise ValueError("need 0 <= s <= t <= horizon")
    sol = term.flow.solve(term.horizon - t, term.ucurve.value(float(t)), gradients=True)
    du = term.ucurve.derivative(float(t))
    p_t = -float(sol.grad_phi @ du)
    q_t = -sol.jac_psi @ du
    spot = SpotCharacteristics(term)
    phi, psi = solve_riccati_inhomogeneous(spot.F, spot.R, s, t, w * q_t)
    x_arr = np.atleast_2d(np.asarray(x_s, dtype=float))
    out = np.exp(w * p_t + phi + x_arr @ psi)
    return out if np.asarray(x_s, dtype=float).ndim > 1 else out[0]
