"""Discrete-tenor multi-curve interest rate model.

Builds the martingale family ``M^u_t = exp(phi_{T_N-t}(u) + <psi_{T_N-t}(u),
X_t>)`` on top of the affine core and calibrates it to an initial term
structure: the ``u``-sequence reproduces OIS discount-factor ratios, the
per-tenor ``v``-sequences reproduce initial forward LIBOR rates.  Both live
on a one-parameter manifold in the nonnegative orthant, which turns every
fitting step into a monotone scalar root-find.

Conventions: the manifold parameter runs from the far end (largest
martingale value) at 0 to the origin at ``s_max``; all fitted vectors are
stored with their parameter locations so ordering statements ("v beyond u")
are exact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from ._util import readonly_array
from .affine import RiccatiFlow
from .errors import FittingError, ScenarioError

__all__ = [
    "TenorStructure",
    "InitialTermStructure",
    "LineSegment",
    "QuarterArc",
    "Manifold",
    "line_manifold",
    "knotted_manifold",
    "CalibratedSequences",
    "fit_u_sequence",
    "fit_v_sequences",
    "calibrate",
    "martingale_value",
    "ois_forward_rate",
    "libor_rate",
    "spread",
    "ForwardMeasureFlow",
    "forward_measure_characteristics",
    "load_discount_csv",
    "load_libor_csv",
    "initial_term_structure_from_csv",
]

# tolerance identifying an evaluation time with a tenor date
_DATE_TOL = 1e-9
# bisection tolerance in the manifold parameter
_PARAM_TOL = 1e-12


# ---------------------------------------------------------------------------
# tenor structures and initial data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TenorStructure:
    """Equidistant master grid ``T_0 = 0 < ... < T_N`` plus tenor subgrids.

    Args:
        dates: the master tenor dates including 0, equidistant.
        tenors: label -> spacing multiple, e.g. ``{"3M": 1, "6M": 2}`` on a
            quarterly master grid; each subgrid is every multiple-th master
            date, so subgrids are subsets of the master grid and end at T_N.
    """

    dates: np.ndarray
    tenors: dict[str, int]

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype=float)
        if dates.ndim != 1 or len(dates) < 2 or dates[0] != 0.0:
            raise ValueError("dates must start at 0 and contain at least one period")
        steps = np.diff(dates)
        if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=0, atol=1e-12):
            raise ValueError("master grid must be strictly increasing and equidistant")
        n = len(dates) - 1
        for label, mult in self.tenors.items():
            if not isinstance(mult, int) or mult < 1:
                raise ValueError(f"tenor {label!r}: multiple must be a positive integer")
            if n % mult != 0:
                raise ValueError(f"tenor {label!r}: subgrid must end at the terminal date")
        object.__setattr__(self, "dates", readonly_array(dates))
        object.__setattr__(self, "tenors", dict(self.tenors))

    @property
    def n_periods(self) -> int:
        return len(self.dates) - 1

    @property
    def delta(self) -> float:
        return float(self.dates[1] - self.dates[0])

    @property
    def horizon(self) -> float:
        return float(self.dates[-1])

    def sub_indices(self, x: str) -> np.ndarray:
        """Master indices of the tenor-x dates (0, mult, 2 mult, ...)."""
        return np.arange(0, self.n_periods + 1, self.tenors[x])

    def sub_dates(self, x: str) -> np.ndarray:
        return self.dates[self.sub_indices(x)]

    def n_sub(self, x: str) -> int:
        return self.n_periods // self.tenors[x]

    def delta_x(self, x: str) -> float:
        return self.tenors[x] * self.delta

    def ceil_index(self, t: float, x: str | None = None) -> int:
        """Smallest k with ``t < T_k`` on the master (or tenor-x) grid.

        Strict: exactly at a tenor date the date itself is excluded, so the
        index points at the next one.  Times within 1e-9 of a date are
        identified with it.
        """
        dates = self.dates if x is None else self.sub_dates(x)
        if t < -_DATE_TOL or t > dates[-1] + _DATE_TOL:
            raise ValueError(f"time {t} outside the tenor structure")
        return int(np.searchsorted(dates, t + _DATE_TOL, side="left"))


@dataclass(frozen=True)
class InitialTermStructure:
    """Initial OIS discount factors and forward LIBOR rates.

    Args:
        tenor: the grid the data lives on.
        ois_discount: ``B(0, T_l)`` for l = 0..N with ``B(0,0) = 1``,
            positive and non-increasing.
        libor: label -> initial forward LIBOR ``L^x_k(0)`` for k = 1..N^x
            (the rate fixed at ``T^x_{k-1}`` and paid at ``T^x_k``).
    """

    tenor: TenorStructure
    ois_discount: np.ndarray
    libor: dict[str, np.ndarray]

    def __post_init__(self):
        B = np.asarray(self.ois_discount, dtype=float)
        if B.shape != (self.tenor.n_periods + 1,):
            raise ValueError("need one discount factor per master date, including T_0")
        if abs(B[0] - 1.0) > 1e-12:
            raise ValueError("B(0, 0) must be 1")
        if np.any(B <= 0):
            raise ValueError("discount factors must be positive")
        if np.any(np.diff(B) > 1e-15):
            raise ValueError("discount factors must be non-increasing in maturity")
        libor = {}
        for label, rates in self.libor.items():
            if label not in self.tenor.tenors:
                raise ValueError(f"unknown tenor {label!r}")
            rates = np.asarray(rates, dtype=float)
            if rates.shape != (self.tenor.n_sub(label),):
                raise ValueError(f"tenor {label!r}: need one LIBOR rate per period")
            if np.any(1.0 + self.tenor.delta_x(label) * rates <= 0.0):
                raise ValueError(f"tenor {label!r}: rates below the -1/delta bound")
            libor[label] = readonly_array(rates)
        object.__setattr__(self, "ois_discount", readonly_array(B))
        object.__setattr__(self, "libor", libor)

    def log_ratio_targets(self) -> np.ndarray:
        """``tau_l = log(B(0,T_l) / B(0,T_N))`` for l = 0..N (decreasing to 0)."""
        return np.log(self.ois_discount) - math.log(self.ois_discount[-1])

    def ois_forward(self, x: str) -> np.ndarray:
        """Initial OIS forward rates ``F^x_k(0)`` on the tenor-x grid."""
        Bx = self.ois_discount[self.tenor.sub_indices(x)]
        return (Bx[:-1] / Bx[1:] - 1.0) / self.tenor.delta_x(x)

    def spreads(self, x: str) -> np.ndarray:
        """Initial additive spreads ``L^x_k(0) - F^x_k(0)``."""
        return self.libor[x] - self.ois_forward(x)


# ---------------------------------------------------------------------------
# parameter manifolds
# ---------------------------------------------------------------------------


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)


@dataclass(frozen=True)
class LineSegment:
    """Straight stretch from ``start`` to ``end``."""

    start: np.ndarray
    end: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "start", readonly_array(self.start))
        object.__setattr__(self, "end", readonly_array(self.end))

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end - self.start))

    def point(self, frac):
        frac = np.asarray(frac, dtype=float)
        return self.start + np.multiply.outer(frac, self.end - self.start)

    def tangent(self, frac) -> np.ndarray:
        return (self.end - self.start) / self.length


@dataclass(frozen=True)
class QuarterArc:
    """Axis-aligned quarter ellipse rounding a corner between two stretches.

    ``p(w) = start + radius_in sin(w) dir_in + radius_out (1 - cos(w)) dir_out``
    for ``w`` in [0, pi/2], so the tangent turns continuously from ``dir_in``
    at the entry to ``dir_out`` at the exit.  The segment parameter runs
    proportionally to ``w`` (arclength-like, exact arclength for equal radii).
    """

    start: np.ndarray
    dir_in: np.ndarray
    dir_out: np.ndarray
    radius_in: float
    radius_out: float

    def __post_init__(self):
        d_in = np.asarray(self.dir_in, dtype=float)
        d_out = np.asarray(self.dir_out, dtype=float)
        for name, d in (("dir_in", d_in), ("dir_out", d_out)):
            if abs(np.linalg.norm(d) - 1.0) > 1e-12:
                raise ValueError(f"{name} must be a unit vector")
        if abs(d_in @ d_out) > 1e-12:
            raise ValueError("arc directions must be orthogonal")
        if self.radius_in <= 0 or self.radius_out <= 0:
            raise ValueError("arc radii must be positive")
        object.__setattr__(self, "start", readonly_array(self.start))
        object.__setattr__(self, "dir_in", readonly_array(d_in))
        object.__setattr__(self, "dir_out", readonly_array(d_out))

    @property
    def end(self) -> np.ndarray:
        return self.start + self.radius_in * self.dir_in + self.radius_out * self.dir_out

    @property
    def length(self) -> float:
        w = 0.25 * math.pi * (_GL_NODES + 1.0)
        speed = np.hypot(self.radius_in * np.cos(w), self.radius_out * np.sin(w))
        return float(0.25 * math.pi * (_GL_WEIGHTS @ speed))

    def point(self, frac):
        w = np.multiply.outer(np.asarray(frac, dtype=float), 0.5 * math.pi)
        return (
            self.start
            + self.radius_in * np.multiply.outer(np.sin(w), self.dir_in)
            + self.radius_out * np.multiply.outer(1.0 - np.cos(w), self.dir_out)
        )

    def tangent(self, frac) -> np.ndarray:
        w = 0.5 * math.pi * float(frac)
        t = self.radius_in * math.cos(w) * self.dir_in + self.radius_out * math.sin(w) * self.dir_out
        return t / np.linalg.norm(t)


@dataclass(frozen=True)
class PlanarArc:
    """Circular arc blending two unit tangent directions in their plane.

    ``p(w) = start + radius (sin(w) e1 + (1 - cos(w)) e2)`` for ``w`` in
    ``[0, angle]``, where ``e1 = dir_in`` and ``e2`` is the in-plane unit
    vector orthogonal to ``e1`` chosen so the tangent reaches ``dir_out``
    at ``w = angle``.  Every intermediate tangent is a nonnegative
    combination of the two end directions, so componentwise non-positive
    directions give a componentwise non-increasing arc.  The segment
    parameter is exact arclength.
    """

    start: np.ndarray
    dir_in: np.ndarray
    dir_out: np.ndarray
    radius: float

    def __post_init__(self):
        d_in = np.asarray(self.dir_in, dtype=float)
        d_out = np.asarray(self.dir_out, dtype=float)
        for name, d in (("dir_in", d_in), ("dir_out", d_out)):
            if abs(np.linalg.norm(d) - 1.0) > 1e-12:
                raise ValueError(f"{name} must be a unit vector")
        cos_turn = float(d_in @ d_out)
        if cos_turn > 1.0 - 1e-12 or cos_turn < -1.0 + 1e-12:
            raise ValueError("arc directions must be distinct and not opposite")
        if self.radius <= 0:
            raise ValueError("arc radius must be positive")
        angle = math.acos(cos_turn)
        normal = (d_out - cos_turn * d_in) / math.sin(angle)
        object.__setattr__(self, "start", readonly_array(self.start))
        object.__setattr__(self, "dir_in", readonly_array(d_in))
        object.__setattr__(self, "dir_out", readonly_array(d_out))
        object.__setattr__(self, "angle", angle)
        object.__setattr__(self, "_normal", readonly_array(normal))

    @property
    def end(self) -> np.ndarray:
        return self.point(1.0)

    @property
    def length(self) -> float:
        return self.radius * self.angle

    def point(self, frac):
        w = np.multiply.outer(np.asarray(frac, dtype=float), self.angle)
        return (
            self.start
            + self.radius * np.multiply.outer(np.sin(w), self.dir_in)
            + self.radius * np.multiply.outer(1.0 - np.cos(w), self._normal)
        )

    def tangent(self, frac) -> np.ndarray:
        w = self.angle * float(frac)
        return math.cos(w) * self.dir_in + math.sin(w) * self._normal


class Manifold:
    """C^0 (optionally C^1) path from a far point to the origin.

    The global parameter is the cumulative segment length, ``s = 0`` at the
    far end and ``s = s_max`` at the origin; the path must be componentwise
    non-increasing and stay in the nonnegative orthant, so that the
    martingale value ``M_0^{g(s)}`` is non-increasing along it.
    """

    def __init__(self, segments):
        segments = list(segments)
        if not segments:
            raise ValueError("need at least one segment")
        for a, b in zip(segments[:-1], segments[1:]):
            if not np.allclose(a.end, b.start, rtol=0, atol=1e-12):
                raise ValueError("segments must join continuously")
        for seg in segments:
            if isinstance(seg, LineSegment):
                if np.any(seg.end > seg.start + 1e-14):
                    raise ValueError("segments must be componentwise non-increasing")
            else:
                if np.any(seg.dir_in > 1e-14) or np.any(seg.dir_out > 1e-14):
                    raise ValueError("arc directions must be componentwise non-positive")
            if np.any(seg.start < -1e-14) or np.any(seg.end < -1e-14):
                raise ValueError("manifold must stay in the nonnegative orthant")
        if not np.allclose(segments[-1].end, 0.0, rtol=0, atol=1e-12):
            raise ValueError("manifold must end at the origin")
        self.segments = segments
        self._lengths = np.array([seg.length for seg in segments])
        if np.any(self._lengths <= 0):
            raise ValueError("zero-length segment")
        self._breaks = np.concatenate([[0.0], np.cumsum(self._lengths)])

    @property
    def dimension(self) -> int:
        return len(self.segments[0].start)

    @property
    def s_max(self) -> float:
        return float(self._breaks[-1])

    @property
    def far_point(self) -> np.ndarray:
        return self.segments[0].start

    @property
    def junction_parameters(self) -> np.ndarray:
        """Interior segment boundaries in the global parameter.

        The path is C^1 across them when ``is_c1`` holds, but its curvature
        may jump, which matters to consumers interpolating along ``s``.
        """
        return self._breaks[1:-1].copy()

    @property
    def arc_spans(self) -> list[tuple[float, float]]:
        """Parameter intervals ``(s_lo, s_hi)`` covered by curved segments."""
        return [
            (float(self._breaks[i]), float(self._breaks[i + 1]))
            for i, seg in enumerate(self.segments)
            if not isinstance(seg, LineSegment)
        ]

    @property
    def is_c1(self) -> bool:
        """True when adjacent segments meet with matching tangent directions."""
        for a, b in zip(self.segments[:-1], self.segments[1:]):
            if np.linalg.norm(a.tangent(1.0) - b.tangent(0.0)) > 1e-9:
                return False
        return True

    def _locate(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s = np.asarray(s, dtype=float)
        if np.any(s < -1e-12) or np.any(s > self.s_max + 1e-12):
            raise ValueError("parameter outside [0, s_max]")
        s = np.clip(s, 0.0, self.s_max)
        idx = np.clip(np.searchsorted(self._breaks, s, side="right") - 1, 0, len(self.segments) - 1)
        frac = (s - self._breaks[idx]) / self._lengths[idx]
        # The cumulative breaks round, so land the path endpoint exactly on
        # the last segment's endpoint (the origin).
        frac = np.where(s >= self.s_max, 1.0, np.minimum(frac, 1.0))
        return idx, frac

    def point(self, s: float) -> np.ndarray:
        idx, frac = self._locate(np.asarray([s]))
        return self.segments[int(idx[0])].point(float(frac[0]))

    def point_many(self, s: np.ndarray) -> np.ndarray:
        """Vectorized evaluation; (K,) parameters -> (K, d) points."""
        idx, frac = self._locate(np.asarray(s, dtype=float))
        out = np.empty((len(idx), self.dimension))
        for i in np.unique(idx):
            sel = idx == i
            out[sel] = self.segments[int(i)].point(frac[sel])
        return out

    def tangent(self, s: float) -> np.ndarray:
        """Unit tangent in the direction of increasing parameter."""
        idx, frac = self._locate(np.asarray([s]))
        return self.segments[int(idx[0])].tangent(float(frac[0]))


def line_manifold(far_point: np.ndarray) -> Manifold:
    """Single straight segment from ``far_point`` to the origin."""
    far_point = np.asarray(far_point, dtype=float)
    return Manifold([LineSegment(far_point, np.zeros_like(far_point))])


def _log_m0_at(flow: RiccatiFlow, point: np.ndarray) -> float:
    return float(flow.log_m0(point[None, :])[0])


def knotted_manifold(
    flow: RiccatiFlow,
    targets: np.ndarray,
    knot_indices,
    axis_order,
    *,
    far_target: float | None = None,
    rounding: float = 0.35,
) -> Manifold:
    """Axis-parallel staircase with quarter-arc corner rounding.

    Corner j is placed on its axis ray so that ``log M_0`` at the unrounded
    corner equals ``targets[knot_indices[j]]`` — after calibration the
    fitted vectors near those indices land around the corners.  Rounding
    replaces each corner by a circular quarter arc whose radius is
    ``rounding`` times the shorter adjacent edge, producing a C^1 path
    (``rounding = 0`` keeps sharp corners).

    Args:
        targets: decreasing log martingale targets (e.g. log B-ratios),
            indexed by master tenor index.
        knot_indices: strictly increasing indices of the corners.
        axis_order: active component per sector, one entry more than
            ``knot_indices``; consecutive entries must differ, and each
            component's last sector drives it to zero.
        far_target: log martingale value at the far endpoint; defaults to a
            small headroom above ``targets[0]``.
    """
    targets = np.asarray(targets, dtype=float)
    knots = list(knot_indices)
    axes = list(axis_order)
    if len(axes) != len(knots) + 1:
        raise ValueError("need one axis per sector (one more than knot count)")
    if any(a == b for a, b in zip(axes[:-1], axes[1:])):
        raise ValueError("consecutive sectors must use different axes")
    if any(k2 <= k1 for k1, k2 in zip(knots[:-1], knots[1:])):
        raise ValueError("knot indices must be strictly increasing")
    if knots and not (0 < knots[0] and knots[-1] < len(targets) - 1):
        raise ValueError("knot indices must be interior")
    if far_target is None:
        far_target = targets[0] + 0.05 * (targets[0] - targets[-1]) + 1e-6

    d = flow.spec.dimension
    corner_targets = [float(far_target)] + [float(targets[k]) for k in knots]

    # Walk the sectors backward from the origin, raising one component per
    # sector until log M_0 hits the sector's entry target.
    vertices = [np.zeros(d)]
    pt = np.zeros(d)
    for i in reversed(range(len(axes))):
        a, target = axes[i], corner_targets[i]
        base = pt.copy()
        if _log_m0_at(flow, base) > target:
            raise FittingError(
                f"manifold knot targets must increase toward the far end (sector {i})"
            )

        def h_minus(c: float) -> float:
            q = base.copy()
            q[a] = c
            return _log_m0_at(flow, q) - target

        hi = max(base[a], 1.0)
        while h_minus(hi) < 0.0:
            hi *= 2.0
            if hi > 1e8:
                raise FittingError(f"sector {i}: target {target:g} unreachable along axis {a}")
        c_star = brentq(h_minus, base[a], hi, xtol=1e-12, rtol=8.9e-16)
        pt = base.copy()
        pt[a] = c_star
        vertices.append(pt)
    vertices.reverse()  # far point first, origin last

    # Round the corners.
    dirs = []
    edge_len = []
    for va, vb in zip(vertices[:-1], vertices[1:]):
        edge = vb - va
        edge_len.append(np.linalg.norm(edge))
        dirs.append(edge / edge_len[-1])
    radii = []
    for j in range(1, len(vertices) - 1):
        r = rounding * min(edge_len[j - 1], edge_len[j])
        radii.append(min(r, 0.45 * edge_len[j - 1], 0.45 * edge_len[j]))

    segments = []
    current = vertices[0]
    for j in range(1, len(vertices) - 1):
        corner, rho = vertices[j], radii[j - 1]
        if rho <= 0.0:
            segments.append(LineSegment(current, corner))
            current = corner
            continue
        entry = corner - rho * dirs[j - 1]
        if np.linalg.norm(entry - current) > 1e-14:
            segments.append(LineSegment(current, entry))
        arc = QuarterArc(entry, dirs[j - 1], dirs[j], rho, rho)
        segments.append(arc)
        current = arc.end
    segments.append(LineSegment(current, vertices[-1]))
    return Manifold(segments)


def staged_manifold(
    flow: RiccatiFlow,
    targets: np.ndarray,
    knot_indices,
    component_order,
    *,
    turn_degrees: tuple[float, float] = (35.0, 45.0),
    far_target: float | None = None,
) -> Manifold:
    """Three straight sectors shedding one component each, joined by arcs.

    The path approaches the origin along a single component axis; walking
    outward it tilts into one new component across each of two tangent
    circular arcs, so the far sector moves all three listed components at
    fixed mixing ratios, the middle sector two, and the near sector one.
    Junction points are placed so ``log M_0`` there equals ``targets`` at
    the four knot indices: fitted vectors between the outer (inner) knot
    pair land on the first (second) arc, all others on straight stretches.

    Args:
        targets: decreasing log martingale targets (e.g. log B-ratios),
            indexed by master tenor index.
        knot_indices: four strictly increasing interior indices bracketing
            the two arcs.
        component_order: the three driving components in the order they
            drop out walking toward the origin (the last stays active to
            the end).
        turn_degrees: tangent turn angle of each arc, far arc first, in
            (0, 90] degrees.
        far_target: log martingale value at the far endpoint; defaults to
            a small headroom above ``targets[0]``.
    """
    targets = np.asarray(targets, dtype=float)
    knots = list(knot_indices)
    order = list(component_order)
    d = flow.spec.dimension
    if len(knots) != 4:
        raise ValueError("need four knot indices, one per arc endpoint")
    if any(k2 <= k1 for k1, k2 in zip(knots[:-1], knots[1:])):
        raise ValueError("knot indices must be strictly increasing")
    if not (0 < knots[0] and knots[-1] < len(targets) - 1):
        raise ValueError("knot indices must be interior")
    if len(order) != 3 or len(set(order)) != 3:
        raise ValueError("component order must list three distinct components")
    if any(not 0 <= c < d for c in order):
        raise ValueError("component order entries must index driving components")
    theta_far, theta_near = (math.radians(float(t)) for t in turn_degrees)
    for theta in (theta_far, theta_near):
        if not 0.0 < theta <= 0.5 * math.pi + 1e-12:
            raise ValueError("turn angles must lie in (0, 90] degrees")
    if far_target is None:
        far_target = targets[0] + 0.05 * (targets[0] - targets[-1]) + 1e-6

    c_first, c_mid, c_last = (np.eye(d)[c] for c in order)
    sector_targets = [float(targets[k]) for k in reversed(knots)] + [float(far_target)]
    if any(b <= a for a, b in zip(sector_targets[:-1], sector_targets[1:])):
        raise FittingError("manifold knot targets must increase toward the far end")

    def _walk(base: np.ndarray, step: np.ndarray, target: float, what: str) -> float:
        """Length c > 0 with ``log M_0(base + c step) = target`` (step >= 0)."""
        if _log_m0_at(flow, base) > target:
            raise FittingError(f"{what}: already past target {target:g}")

        def h(c: float) -> float:
            return _log_m0_at(flow, base + c * step) - target

        hi = 1.0
        while h(hi) < 0.0:
            hi *= 2.0
            if hi > 1e8:
                raise FittingError(f"{what}: target {target:g} unreachable")
        return brentq(h, 0.0, hi, xtol=1e-12, rtol=8.9e-16)

    # Walk outward from the origin: straight stretch along the last
    # component, an arc tilting into the middle component, a straight
    # stretch, an arc tilting into the first component, a final stretch.
    # Each arc radius is solved so log M_0 at the arc's outer end hits the
    # outer knot target, keeping every junction pinned to its target.
    origin = np.zeros(d)
    p_near = _walk(origin, c_last, sector_targets[0], "near sector") * c_last

    arc_near_step = math.sin(theta_near) * c_last + (1.0 - math.cos(theta_near)) * c_mid
    r_near = _walk(p_near, arc_near_step, sector_targets[1], "near arc")
    p_mid_lo = p_near + r_near * arc_near_step
    dir_mid = math.cos(theta_near) * c_last + math.sin(theta_near) * c_mid

    p_mid_hi = p_mid_lo + _walk(p_mid_lo, dir_mid, sector_targets[2], "middle sector") * dir_mid

    arc_far_step = math.sin(theta_far) * dir_mid + (1.0 - math.cos(theta_far)) * c_first
    r_far = _walk(p_mid_hi, arc_far_step, sector_targets[3], "far arc")
    p_far_lo = p_mid_hi + r_far * arc_far_step
    dir_far = math.cos(theta_far) * dir_mid + math.sin(theta_far) * c_first

    far_point = p_far_lo + _walk(p_far_lo, dir_far, sector_targets[4], "far sector") * dir_far

    return Manifold(
        [
            LineSegment(far_point, p_far_lo),
            PlanarArc(p_far_lo, -dir_far, -dir_mid, r_far),
            LineSegment(p_mid_hi, p_mid_lo),
            PlanarArc(p_mid_lo, -dir_mid, -c_last, r_near),
            LineSegment(p_near, origin),
        ]
    )


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CalibratedSequences:
    """Fitted martingale parameters on their manifold.

    ``u`` has one row per master date (row N is exactly zero); ``v[x]`` has
    one row per tenor-x date, the last one a documented convention repeating
    the final LIBOR target.  Parameter locations ``s_u``, ``s_v`` make the
    ordering statements exact: larger parameter = closer to the origin.
    """

    tenor: TenorStructure
    manifold: Manifold
    u: np.ndarray
    s_u: np.ndarray
    v: dict[str, np.ndarray]
    s_v: dict[str, np.ndarray]

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        n = self.tenor.n_periods
        if u.shape != (n + 1, self.manifold.dimension):
            raise ValueError("u must have one row per master date")
        if np.any(u[-1] != 0.0):
            raise ValueError("u_N must be exactly zero")
        if np.any(np.diff(u, axis=0) > 0.0):
            raise ValueError("u must be componentwise non-increasing in the index")
        v, s_v = {}, {}
        for x, vx in self.v.items():
            vx = np.asarray(vx, dtype=float)
            sub = self.tenor.sub_indices(x)
            if vx.shape != (len(sub), self.manifold.dimension):
                raise ValueError(f"v[{x!r}] must have one row per tenor date")
            if np.any(vx[:-1] < u[sub][:-1]):
                raise ValueError(f"v[{x!r}] must dominate u on the tenor grid")
            v[x] = readonly_array(vx)
            s_v[x] = readonly_array(self.s_v[x])
        object.__setattr__(self, "u", readonly_array(u))
        object.__setattr__(self, "s_u", readonly_array(self.s_u))
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "s_v", s_v)

    def u_at_tenor(self, x: str) -> np.ndarray:
        """Rows of ``u`` at the tenor-x dates (``u^x_k``)."""
        return self.u[self.tenor.sub_indices(x)]


def _bisect_log_targets(
    flow: RiccatiFlow,
    manifold: Manifold,
    targets: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
) -> np.ndarray:
    """Batched bisection for ``log M_0^{g(s)} = target`` on [lo, hi].

    Assumes the residual is >= 0 at lo and <= 0 at hi (the map is
    non-increasing in the parameter); every iteration evaluates all
    midpoints in one stacked Riccati solve.
    """
    lo = lo.astype(float).copy()
    hi = hi.astype(float).copy()
    n_iter = max(1, int(math.ceil(math.log2(max(np.max(hi - lo), _PARAM_TOL) / _PARAM_TOL))))
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        res = flow.log_m0(manifold.point_many(mid)) - targets
        take_lo = res >= 0.0
        lo[take_lo] = mid[take_lo]
        hi[~take_lo] = mid[~take_lo]
    return 0.5 * (lo + hi)


def fit_u_sequence(
    flow: RiccatiFlow, init: InitialTermStructure, manifold: Manifold
) -> tuple[np.ndarray, np.ndarray]:
    """Fit ``u_0..u_N`` on the manifold to the initial OIS curve.

    Each ``u_l`` solves ``M_0^{u_l} = B(0,T_l)/B(0,T_N)`` (with ``B(0,T_0)
    = 1``, pinning ``u_0``); ``u_N = 0`` is exact.  Equal consecutive
    discount factors reuse the previous vector, zero targets map to the
    origin exactly.

    Returns:
        ``(u, s)``: the vectors (N+1, d) and their manifold parameters.

    Raises:
        FittingError: when the far end of the manifold cannot reach the
            largest target, or the refit check fails.
    """
    tau = init.log_ratio_targets()
    n = init.tenor.n_periods
    d = manifold.dimension
    far_value = _log_m0_at(flow, manifold.far_point)
    if far_value < np.max(tau) - 1e-12:
        bad = int(np.argmax(tau))
        raise FittingError(
            f"manifold too short: target for maturity T_{bad} "
            f"({tau[bad]:.6g}) exceeds the far-end value {far_value:.6g}"
        )

    s = np.full(n + 1, manifold.s_max)
    u = np.zeros((n + 1, d))
    free = tau > 1e-15  # zero targets sit at the origin exactly
    if np.any(free):
        idx = np.flatnonzero(free)
        new = idx[np.concatenate([[True], np.abs(np.diff(tau[idx])) > 1e-15])]
        s_new = _bisect_log_targets(
            flow, manifold, tau[new], np.zeros(len(new)), np.full(len(new), manifold.s_max)
        )
        pts = manifold.point_many(s_new)
        pos = np.searchsorted(new, idx, side="right") - 1  # tie -> reuse previous
        s[idx] = s_new[pos]
        u[idx] = pts[pos]

    # Exact componentwise ordering on the stored vectors.  Sweep backward
    # from the origin row so that float noise in components the manifold has
    # already frozen to zero is lifted to exact zero instead of leaking into
    # ``u_N`` (which must stay identically zero).
    for l in range(n - 1, -1, -1):
        u[l] = np.maximum(u[l], u[l + 1])

    refit = flow.log_m0(u) - tau
    worst = np.max(np.abs(refit) / np.maximum(1.0, np.abs(tau)))
    if worst > 1e-10:
        raise FittingError(f"u-fit did not converge: relative residual {worst:.3g}")
    return u, s


def fit_v_sequences(
    flow: RiccatiFlow,
    init: InitialTermStructure,
    manifold: Manifold,
    u: np.ndarray,
    s_u: np.ndarray,
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Fit the per-tenor ``v``-sequences to the initial LIBOR rates.

    ``v^x_k`` solves ``M_0^{v^x_k} = (1 + delta_x L^x_{k+1}(0)) M_0^{u^x_{k+1}}``
    for k = 0..N^x-1, searched on the manifold between the far end and
    ``u^x_k`` — which makes ``v^x_k >= u^x_k`` hold by construction and turns
    the initial spread condition ``L >= F`` into bracket validity.  The last
    entry ``v^x_{N^x}`` repeats the final LIBOR target (a convention; it is
    never referenced by swap cash flows).  Exactly zero spreads reuse ``u``.

    Raises:
        FittingError: when a spread condition is violated or a target is
            unreachable.
    """
    tau = init.log_ratio_targets()
    v_out, s_out = {}, {}
    for x in init.libor:
        sub = init.tenor.sub_indices(x)
        n_x = init.tenor.n_sub(x)
        delta_x = init.tenor.delta_x(x)
        log_growth = np.log1p(delta_x * init.libor[x])  # k = 1..N^x
        targets = np.concatenate([log_growth + tau[sub][1:], [log_growth[-1]]])
        hi = np.concatenate([s_u[sub][:-1], [manifold.s_max]])
        lo = np.zeros(n_x + 1)

        # bracket validity at the u-end encodes the spread condition
        spread_gap = targets[:-1] - tau[sub][:-1]  # = log((1+dL)/(1+dF))
        bad = np.flatnonzero(spread_gap < -1e-12)
        if bad.size:
            k = int(bad[0])
            raise FittingError(
                f"tenor {x!r}: initial spread condition violated for period {k + 1} "
                f"(LIBOR below the OIS forward)"
            )
        far_value = _log_m0_at(flow, manifold.far_point)
        if far_value < np.max(targets) - 1e-12:
            k = int(np.argmax(targets))
            raise FittingError(
                f"tenor {x!r}: target for v_{k} ({targets[k]:.6g}) exceeds the "
                f"far-end value {far_value:.6g}"
            )

        ties = np.abs(spread_gap) <= 1e-13
        solve = ~np.concatenate([ties, [False]])
        s_v = np.empty(n_x + 1)
        v = np.empty((n_x + 1, manifold.dimension))
        if np.any(solve):
            s_fit = _bisect_log_targets(flow, manifold, targets[solve], lo[solve], hi[solve])
            s_v[solve] = s_fit
            v[solve] = manifold.point_many(s_fit)
        # zero spread: identical fitting targets, reuse u exactly
        tie_idx = np.flatnonzero(ties)
        s_v[tie_idx] = s_u[sub][tie_idx]
        v[tie_idx] = u[sub][tie_idx]
        # exact dominance on the stored vectors
        v[:-1] = np.maximum(v[:-1], u[sub][:-1])

        refit = flow.log_m0(v) - targets
        worst = np.max(np.abs(refit) / np.maximum(1.0, np.abs(targets)))
        if worst > 1e-10:
            raise FittingError(f"tenor {x!r}: v-fit did not converge ({worst:.3g})")
        v_out[x] = v
        s_out[x] = s_v
    return v_out, s_out


def calibrate(
    flow: RiccatiFlow, init: InitialTermStructure, manifold: Manifold
) -> CalibratedSequences:
    """Fit both sequences and bundle them."""
    u, s_u = fit_u_sequence(flow, init, manifold)
    v, s_v = fit_v_sequences(flow, init, manifold, u, s_u)
    return CalibratedSequences(
        tenor=init.tenor, manifold=manifold, u=u, s_u=s_u, v=v, s_v=s_v
    )


# ---------------------------------------------------------------------------
# martingales and rates
# ---------------------------------------------------------------------------


def martingale_value(flow: RiccatiFlow, u: np.ndarray, t: float, x):
    """``M_t^u = exp(phi_{T_N-t}(u) + <psi_{T_N-t}(u), x_t>)``.

    ``x`` may be a single state (d,) or a stack (n, d).
    """
    horizon = flow.spec.horizon
    if t < 0 or t > horizon + _DATE_TOL:
        raise ValueError("t must lie in [0, T_N]")
    sol = flow.solve(min(horizon - t, horizon), np.asarray(u, dtype=float), gradients=False)
    return sol.mgf(x)


def _period_martingales(flow, seq, x, k, t, x_t):
    if not 1 <= k <= seq.tenor.n_sub(x):
        raise IndexError(f"period index {k} outside 1..{seq.tenor.n_sub(x)}")
    if t > seq.tenor.sub_dates(x)[k] + _DATE_TOL:
        raise ValueError(f"rate for period {k} undefined past its payment date")
    u_sub = seq.u_at_tenor(x)
    m_u_prev = martingale_value(flow, u_sub[k - 1], t, x_t)
    m_u = martingale_value(flow, u_sub[k], t, x_t)
    m_v_prev = martingale_value(flow, seq.v[x][k - 1], t, x_t)
    return m_u_prev, m_u, m_v_prev


def ois_forward_rate(flow, seq: CalibratedSequences, x: str, k: int, t: float, x_t):
    """``F^x_k(t)`` from ``1 + delta_x F = M^{u^x_{k-1}} / M^{u^x_k}``."""
    m_u_prev, m_u, _ = _period_martingales(flow, seq, x, k, t, x_t)
    return (m_u_prev / m_u - 1.0) / seq.tenor.delta_x(x)


def libor_rate(flow, seq: CalibratedSequences, x: str, k: int, t: float, x_t):
    """``L^x_k(t)`` from ``1 + delta_x L = M^{v^x_{k-1}} / M^{u^x_k}``."""
    m_u_prev, m_u, m_v_prev = _period_martingales(flow, seq, x, k, t, x_t)
    return (m_v_prev / m_u - 1.0) / seq.tenor.delta_x(x)


def spread(flow, seq: CalibratedSequences, x: str, k: int, t: float, x_t):
    """Additive LIBOR-OIS spread ``S^x_k(t) = L^x_k(t) - F^x_k(t)``."""
    m_u_prev, m_u, m_v_prev = _period_martingales(flow, seq, x, k, t, x_t)
    return (m_v_prev - m_u_prev) / m_u / seq.tenor.delta_x(x)


# ---------------------------------------------------------------------------
# forward-measure characteristics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForwardMeasureFlow:
    """Flow pair of ``X`` under the forward measure tied to ``M^{u}``.

    ``phi^{u}_t(w) = phi_t(psi_{T_N-t}(u) + w) - phi_t(psi_{T_N-t}(u))`` and
    analogously for ``psi``; the moment generating function under the
    forward measure is ``exp(phi^u_t(w) + <psi^u_t(w), x_0>)``.
    """

    flow: RiccatiFlow
    u: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", readonly_array(self.u))

    def flow_pair(self, t: float, w: np.ndarray) -> tuple[float, np.ndarray]:
        base = self.flow.solve(self.flow.spec.horizon - t, self.u, gradients=False).psi
        shifted = self.flow.solve(t, base + np.asarray(w, dtype=float), gradients=False)
        plain = self.flow.solve(t, base, gradients=False)
        return shifted.phi - plain.phi, shifted.psi - plain.psi

    def mgf(self, t: float, w: np.ndarray, x0: np.ndarray | None = None) -> float:
        phi, psi = self.flow_pair(t, w)
        x = self.flow.spec.x0 if x0 is None else np.asarray(x0, dtype=float)
        return float(np.exp(phi + psi @ x))


def forward_measure_characteristics(
    flow: RiccatiFlow, seq: CalibratedSequences, x: str, k: int
) -> ForwardMeasureFlow:
    """Forward-measure flow for the tenor-x date ``T^x_k`` (numeraire ``M^{u^x_k}``)."""
    if not 0 <= k <= seq.tenor.n_sub(x):
        raise IndexError(f"index {k} outside 0..{seq.tenor.n_sub(x)}")
    return ForwardMeasureFlow(flow=flow, u=seq.u_at_tenor(x)[k])


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def _read_csv_rows(path, required: tuple[str, ...]) -> list[dict[str, str]]:
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        missing = [c for c in required if c not in cols]
        if missing:
            raise ScenarioError(f"{path}: missing columns {missing}")
        return list(reader)


def load_discount_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read (maturity_years, discount_factor) rows, sorted by maturity."""
    rows = _read_csv_rows(path, ("maturity_years", "discount_factor"))
    try:
        data = np.array(
            [(float(r["maturity_years"]), float(r["discount_factor"])) for r in rows]
        )
    except ValueError as exc:
        raise ScenarioError(f"{path}: non-numeric entry ({exc})") from None
    if data.size == 0:
        raise ScenarioError(f"{path}: no data rows")
    data = data[np.argsort(data[:, 0])]
    return data[:, 0], data[:, 1]


def load_libor_csv(path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Read (tenor, maturity_years, libor_rate) rows, grouped by tenor label."""
    rows = _read_csv_rows(path, ("tenor", "maturity_years", "libor_rate"))
    grouped: dict[str, list[tuple[float, float]]] = {}
    for r in rows:
        try:
            grouped.setdefault(r["tenor"], []).append(
                (float(r["maturity_years"]), float(r["libor_rate"]))
            )
        except ValueError as exc:
            raise ScenarioError(f"{path}: non-numeric entry ({exc})") from None
    if not grouped:
        raise ScenarioError(f"{path}: no data rows")
    out = {}
    for label, pairs in grouped.items():
        arr = np.array(sorted(pairs))
        out[label] = (arr[:, 0], arr[:, 1])
    return out


def initial_term_structure_from_csv(
    tenor: TenorStructure, discount_path, libor_path
) -> InitialTermStructure:
    """Assemble an :class:`InitialTermStructure` from the two CSV files.

    Maturities must line up with the tenor grids to 1e-9; ``B(0,0) = 1`` is
    implied and may be omitted from the file.
    """
    mat, disc = load_discount_csv(discount_path)
    if abs(mat[0]) < _DATE_TOL:  # optional explicit (0, 1) row
        mat, disc = mat[1:], disc[1:]
    if len(mat) != tenor.n_periods or np.max(np.abs(mat - tenor.dates[1:])) > _DATE_TOL:
        raise ScenarioError(f"{discount_path}: maturities do not match the tenor grid")
    ois = np.concatenate([[1.0], disc])

    libor = {}
    for label, (mat_x, rates) in load_libor_csv(libor_path).items():
        if label not in tenor.tenors:
            raise ScenarioError(f"{libor_path}: unknown tenor {label!r}")
        expected = tenor.sub_dates(label)[1:]
        if len(mat_x) != len(expected) or np.max(np.abs(mat_x - expected)) > _DATE_TOL:
            raise ScenarioError(
                f"{libor_path}: tenor {label!r} maturities do not match its grid"
            )
        libor[label] = rates
    return InitialTermStructure(tenor=tenor, ois_discount=ois, libor=libor)
