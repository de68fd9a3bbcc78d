"""Basis-swap valuation and counterparty/funding valuation adjustments.

The exposure instrument is a two-leg basis swap exchanging LIBOR flows of
two different tenors plus a spread on the finer leg.  Its clean price is an
explicit function of the fitted martingale parameters, so whole path
bundles can be priced with stacked Riccati solves.

The total valuation adjustment solves a Markovian backward equation under
the rolling spot measure.  The backward step uses a k-nearest-neighbour
estimate of the conditional expectation; the first time slice, where every
path starts from the same state, reduces to a plain sample mean.  For fully
linear close-out/collateral conventions the adjustment also has a forward
Monte Carlo representation used for cross-validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from ._util import readonly_array as _readonly
from .affine import PathGrid
from .errors import UnsupportedCombinationError
from .multicurve import CalibratedSequences
from .tenor import TermStructure

_BRUTE_FORCE_LIMIT = 2048


# ---------------------------------------------------------------------------
# instruments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BasisSwapSpec:
    """Receive the coarse-tenor leg, pay the fine-tenor leg plus ``spread``.

    Both legs run from time zero to ``n_coarse`` coarse periods; the fine
    leg's period count follows from the tenor multiplier ratio.
    """

    fine_tenor: str
    coarse_tenor: str
    n_coarse: int
    spread: float = 0.0

    def __post_init__(self):
        if self.n_coarse < 1:
            raise ValueError("need at least one coarse period")
        if self.fine_tenor == self.coarse_tenor:
            raise ValueError("legs must reference different tenors")

    def schedule(self, tenor) -> tuple[int, int, float]:
        """``(n_fine, n_coarse, maturity)`` on a tenor structure."""
        delta_f = tenor.delta_x(self.fine_tenor)
        delta_c = tenor.delta_x(self.coarse_tenor)
        if delta_c <= delta_f:
            raise ValueError("coarse leg must have the longer accrual period")
        maturity = self.n_coarse * delta_c
        ratio = delta_c / delta_f
        n_fine = int(round(self.n_coarse * ratio))
        if abs(n_fine * delta_f - maturity) > 1e-9:
            raise ValueError("leg schedules do not share a common maturity")
        if self.n_coarse > tenor.n_sub(self.coarse_tenor):
            raise ValueError("swap maturity exceeds the tenor structure")
        return n_fine, self.n_coarse, maturity


def _stacked_leg_vectors(
    seq: CalibratedSequences, swap: BasisSwapSpec
) -> tuple[np.ndarray, dict[str, slice]]:
    """All martingale parameter vectors a swap valuation needs, stacked.

    Returns the (k, d) stack and column slices ``u_f``/``v_f``/``u_c``/
    ``v_c``; block ``u`` holds ``u_i`` for periods ``i = 1..q`` and block
    ``v`` holds ``v_{i-1}`` for the same periods.
    """
    q_f, q_c, _ = swap.schedule(seq.tenor)
    u_f = seq.u_at_tenor(swap.fine_tenor)
    v_f = seq.v[swap.fine_tenor]
    u_c = seq.u_at_tenor(swap.coarse_tenor)
    v_c = seq.v[swap.coarse_tenor]
    blocks = [u_f[1 : q_f + 1], v_f[0:q_f], u_c[1 : q_c + 1], v_c[0:q_c]]
    names = ("u_f", "v_f", "u_c", "v_c")
    cols: dict[str, slice] = {}
    start = 0
    for name, block in zip(names, blocks):
        cols[name] = slice(start, start + block.shape[0])
        start += block.shape[0]
    return np.vstack(blocks), cols


def basis_swap_price_paths(
    term: TermStructure,
    seq: CalibratedSequences,
    swap: BasisSwapSpec,
    times: np.ndarray,
    states: np.ndarray,
) -> np.ndarray:
    """Clean swap prices along simulated paths.

    Args:
        times: (L,) observation times within ``[0, T_N]``.
        states: (L, n_paths, d) driver states at those times.

    Returns:
        (L, n_paths) prices; exactly zero at and beyond the swap maturity.
    """
    times = np.asarray(times, dtype=float)
    states = np.asarray(states, dtype=float)
    if states.ndim != 3 or states.shape[0] != times.shape[0]:
        raise ValueError("states must have shape (len(times), n_paths, d)")
    tenor = seq.tenor
    q_f, q_c, _ = swap.schedule(tenor)
    vecs, cols = _stacked_leg_vectors(seq, swap)
    k0 = vecs.shape[0]
    flow = term.flow
    horizon = term.horizon

    # one stacked solve for every (vector, time) pair incl. the numeraire
    L = times.shape[0]
    args = np.concatenate(
        [np.vstack([vecs, term.ucurve.value(float(t))[None, :]]) for t in times]
    )
    lags = np.repeat(horizon - times, k0 + 1)
    sols = flow.pairs(args, lags)
    phi = sols["phi"].reshape(L, k0 + 1)
    psi = sols["psi"].reshape(L, k0 + 1, -1)

    delta_f = tenor.delta_x(swap.fine_tenor)
    one_minus = 1.0 - delta_f * swap.spread
    prices = np.zeros((L, states.shape[1]))
    for l, t in enumerate(times):
        c_f = tenor.ceil_index(float(t), swap.fine_tenor)
        c_c = tenor.ceil_index(float(t), swap.coarse_tenor)
        if c_c > q_c and c_f > q_f:
            continue  # matured: price identically zero
        log_m = phi[l][None, :] + states[l] @ psi[l].T  # (n, k0+1)
        m = np.exp(log_m)
        uf, vf = cols["u_f"], cols["v_f"]
        uc, vc = cols["u_c"], cols["v_c"]
        coarse = np.sum(
            m[:, vc][:, c_c - 1 : q_c] - m[:, uc][:, c_c - 1 : q_c], axis=1
        )
        fine = np.sum(
            m[:, vf][:, c_f - 1 : q_f] - one_minus * m[:, uf][:, c_f - 1 : q_f], axis=1
        )
        prices[l] = (coarse - fine) / m[:, -1]
    return prices


def basis_swap_price(
    term: TermStructure,
    seq: CalibratedSequences,
    swap: BasisSwapSpec,
    t: float,
    x,
) -> np.ndarray:
    """Clean swap price at one time for states ``x`` ((d,) or (n, d))."""
    x_was_flat = np.asarray(x).ndim == 1
    states = np.atleast_2d(np.asarray(x, dtype=float))[None, :, :]
    out = basis_swap_price_paths(term, seq, swap, np.array([t]), states)[0]
    return out[0] if x_was_flat else out


def fair_basis_spread(
    flow,
    seq: CalibratedSequences,
    swap: BasisSwapSpec,
    t: float = 0.0,
    x=None,
) -> float:
    """Spread on the fine leg that zeroes the swap price at ``(t, x)``.

    The numeraire cancels out of the zero-price condition, so the result
    does not depend on any interpolation choice; the plain Riccati flow
    suffices.
    """
    if x is None:
        x = flow.spec.x0
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("fair spread is defined for a single state")
    tenor = seq.tenor
    q_f, q_c, _ = swap.schedule(tenor)
    vecs, cols = _stacked_leg_vectors(seq, swap)
    sols = flow.pairs(vecs, flow.spec.horizon - t)
    log_m = sols["phi"] + sols["psi"] @ x
    m = np.exp(log_m)
    c_f = tenor.ceil_index(float(t), swap.fine_tenor)
    c_c = tenor.ceil_index(float(t), swap.coarse_tenor)
    if c_f > q_f:
        raise ValueError("swap has matured; no spread is defined")
    coarse = np.sum(m[cols["v_c"]][c_c - 1 : q_c] - m[cols["u_c"]][c_c - 1 : q_c])
    fine = np.sum(m[cols["v_f"]][c_f - 1 : q_f] - m[cols["u_f"]][c_f - 1 : q_f])
    annuity = np.sum(m[cols["u_f"]][c_f - 1 : q_f])
    delta_f = tenor.delta_x(swap.fine_tenor)
    return float((coarse - fine) / (delta_f * annuity))


# ---------------------------------------------------------------------------
# close-out conventions and the adjustment driver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CSASpec:
    """Close-out, collateral, and funding convention for the adjustment.

    The driver of the backward equation is

        g = -r*theta
            - gamma_cpty (1 - cpty_recovery) (Q - Gamma)^-
            + gamma_bank (1 - bank_recovery) (Q - Gamma)^+
            + b Gamma^+ - b_bar Gamma^-
            + lam (P - theta - Gamma)^+ - lam_tilde (P - theta - Gamma)^-
            + gamma (P - theta - Q)

    with close-out value ``Q`` equal to the clean price ``P`` or the
    pre-default value ``P - theta``, collateral ``Gamma`` either zero or
    the clean price, and ``lam_tilde = lam_bar - gamma_bank (1 -
    closeout_recovery)``.
    """

    name: str
    closeout_recovery: float
    bank_recovery: float
    cpty_recovery: float
    collateral: str = "none"
    closeout: str = "clean"
    gamma_bank: float = 0.05
    gamma_cpty: float = 0.07
    gamma: float = 0.10
    b: float = 0.015
    b_bar: float = 0.015
    lam: float = 0.015
    lam_bar: float = 0.045

    def __post_init__(self):
        for field_name in ("closeout_recovery", "bank_recovery", "cpty_recovery"):
            v = getattr(self, field_name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{field_name} must lie in [0, 1]")
        if self.collateral not in ("none", "clean"):
            raise ValueError(f"unknown collateral rule {self.collateral!r}")
        if self.closeout not in ("clean", "predefault"):
            raise ValueError(f"unknown close-out rule {self.closeout!r}")
        if self.gamma < max(self.gamma_bank, self.gamma_cpty):
            raise ValueError(
                "first-to-default intensity must dominate each party's intensity"
            )

    @property
    def lam_tilde(self) -> float:
        return self.lam_bar - self.gamma_bank * (1.0 - self.closeout_recovery)

    @property
    def is_linear(self) -> bool:
        """True when the driver is affine in ``theta`` (forward MC applies)."""
        return (
            self.closeout == "clean"
            and self.collateral == "none"
            and abs(self.lam_tilde - self.lam) < 1e-14
        )

    def driver(self, r, price, theta):
        """Evaluate ``g(t, x, theta)`` elementwise on arrays."""
        r = np.asarray(r, dtype=float)
        price = np.asarray(price, dtype=float)
        theta = np.asarray(theta, dtype=float)
        q = price if self.closeout == "clean" else price - theta
        gamma_c = np.zeros_like(price) if self.collateral == "none" else price
        exposure = q - gamma_c
        funding_gap = price - theta - gamma_c
        pos = lambda a: np.maximum(a, 0.0)  # noqa: E731
        return (
            -r * theta
            - self.gamma_cpty * (1.0 - self.cpty_recovery) * pos(-exposure)
            + self.gamma_bank * (1.0 - self.bank_recovery) * pos(exposure)
            + self.b * pos(gamma_c)
            - self.b_bar * pos(-gamma_c)
            + self.lam * pos(funding_gap)
            - self.lam_tilde * pos(-funding_gap)
            + self.gamma * (price - theta - q)
        )


def default_csa_set() -> tuple[CSASpec, ...]:
    """The five standard convention combinations used in the reports."""
    base = CSASpec(name="CSA_1", closeout_recovery=0.4, bank_recovery=0.4, cpty_recovery=0.4)
    return (
        base,
        replace(base, name="CSA_2", closeout_recovery=1.0),
        replace(base, name="CSA_3", closeout_recovery=1.0, bank_recovery=1.0),
        replace(
            base,
            name="CSA_4",
            closeout_recovery=1.0,
            bank_recovery=1.0,
            closeout="predefault",
        ),
        replace(base, name="CSA_5", closeout_recovery=1.0, collateral="clean"),
    )


# ---------------------------------------------------------------------------
# conditional expectations
# ---------------------------------------------------------------------------


def nearest_neighbor_indices(
    points: np.ndarray, m: int, method: str = "auto"
) -> np.ndarray:
    """Indices of the ``m`` nearest neighbours of each point (self included).

    ``method`` is ``"brute"`` (stable argsort; ties resolved to the lowest
    index), ``"tree"`` (k-d tree), or ``"auto"`` which switches to the tree
    above a few thousand points.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if not 1 <= m <= n:
        raise ValueError("need 1 <= m <= number of points")
    if method == "auto":
        method = "brute" if n <= _BRUTE_FORCE_LIMIT else "tree"
    if method == "brute":
        diff = points[:, None, :] - points[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        return np.argsort(d2, axis=1, kind="stable")[:, :m]
    if method == "tree":
        tree = cKDTree(points)
        _, idx = tree.query(points, k=m)
        return np.atleast_2d(idx.reshape(n, m))
    raise ValueError(f"unknown method {method!r}")


def knn_conditional_mean(
    points: np.ndarray, values: np.ndarray, m: int, method: str = "auto"
) -> np.ndarray:
    """k-nearest-neighbour regression estimate of ``E[value | point]``.

    ``values`` may be (n,) or (k, n); the estimate averages each point's
    ``m`` nearest neighbours (including itself).
    """
    idx = nearest_neighbor_indices(points, m, method)
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        return values[idx].mean(axis=1)
    return values[:, idx].mean(axis=2)


# ---------------------------------------------------------------------------
# the backward solver and its forward cross-check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TVAResult:
    """Per-slice summary of the valuation adjustment along the path bundle.

    ``mean`` is the cross-path average of the slice estimates, ``p_low``/
    ``p_high`` their 2.5/97.5 percentiles, and ``se`` the standard error of
    the regression target feeding each slice (a sampling diagnostic; exact
    zero at the terminal slice).
    """

    name: str
    times: np.ndarray
    mean: np.ndarray
    p_low: np.ndarray
    p_high: np.ndarray
    se: np.ndarray

    def __post_init__(self):
        for field_name in ("times", "mean", "p_low", "p_high", "se"):
            object.__setattr__(
                self, field_name, _readonly(np.asarray(getattr(self, field_name), dtype=float))
            )

    @property
    def value(self) -> float:
        """The time-zero adjustment."""
        return float(self.mean[0])

    @property
    def value_se(self) -> float:
        return float(self.se[0])


def solve_tva_backward(
    term: TermStructure,
    seq: CalibratedSequences,
    swap: BasisSwapSpec,
    csas,
    paths: PathGrid,
    *,
    m_neighbors: int = 3,
    method: str = "auto",
    prices: np.ndarray | None = None,
) -> list[TVAResult]:
    """Solve the backward adjustment equation for several conventions.

    An explicit scheme on the path grid: the terminal slice is zero and

        theta_l = E[ theta_{l+1} + h g(t_{l+1}, X_{l+1}, theta_{l+1}) | X_l ]

    with the conditional expectation estimated by ``m_neighbors``-nearest-
    neighbour averaging (a plain mean on the first slice, where all paths
    share the initial state).  The neighbour indices are computed once per
    slice and shared by every convention.

    Args:
        paths: spot-measure paths carrying the short rate.
        prices: optional precomputed clean prices (L, n_paths); computed
            from the swap when omitted.

    Returns:
        One ``TVAResult`` per convention, in input order.
    """
    if paths.short_rate is None:
        raise ValueError("paths must carry the short rate (simulate with it recorded)")
    csas = list(csas)
    times = paths.times
    L, n = paths.states.shape[0], paths.states.shape[1]
    if prices is None:
        prices = basis_swap_price_paths(term, seq, swap, times, paths.states)
    if prices.shape != (L, n):
        raise ValueError("prices must have shape (len(times), n_paths)")
    r = paths.short_rate

    k = len(csas)
    mean = np.zeros((k, L))
    p_low = np.zeros((k, L))
    p_high = np.zeros((k, L))
    se = np.zeros((k, L))
    thetas = np.zeros((k, n))

    for l in range(L - 2, -1, -1):
        h = times[l + 1] - times[l]
        targets = np.empty((k, n))
        for c, csa in enumerate(csas):
            targets[c] = thetas[c] + h * csa.driver(r[l + 1], prices[l + 1], thetas[c])
        if l == 0:
            thetas = np.broadcast_to(targets.mean(axis=1)[:, None], (k, n)).copy()
        else:
            idx = nearest_neighbor_indices(paths.states[l], m_neighbors, method)
            thetas = targets[:, idx].mean(axis=2)
        mean[:, l] = thetas.mean(axis=1)
        p_low[:, l], p_high[:, l] = np.percentile(thetas, [2.5, 97.5], axis=1)
        se[:, l] = targets.std(axis=1, ddof=1) / math.sqrt(n)

    return [
        TVAResult(
            name=csa.name,
            times=times,
            mean=mean[c],
            p_low=p_low[c],
            p_high=p_high[c],
            se=se[c],
        )
        for c, csa in enumerate(csas)
    ]


def tva_forward_mc(
    term: TermStructure,
    seq: CalibratedSequences,
    swap: BasisSwapSpec,
    csa: CSASpec,
    paths: PathGrid,
    *,
    prices: np.ndarray | None = None,
) -> tuple[float, float]:
    """Forward Monte Carlo value of a linear-convention adjustment.

    For an affine driver ``g = -(r + gamma + lam) theta + A(t, X)`` the
    adjustment is the discounted running integral of ``A`` with the
    extended discount rate ``r + gamma + lam``:

        theta_0 = E[ int_0^T exp(-int_0^t (r+gamma+lam)) A_t dt ].

    Returns:
        ``(estimate, standard_error)``.

    Raises:
        UnsupportedCombinationError: when the convention is not linear.
    """
    if not csa.is_linear:
        raise UnsupportedCombinationError(
            f"{csa.name} has a nonlinear driver; only the backward solver applies"
        )
    if paths.integrated_short_rate is None:
        raise ValueError("paths must carry integrated short rates")
    times = paths.times
    if prices is None:
        prices = basis_swap_price_paths(term, seq, swap, times, paths.states)
    a = (
        csa.lam * prices
        + csa.gamma_bank * (1.0 - csa.bank_recovery) * np.maximum(prices, 0.0)
        - csa.gamma_cpty * (1.0 - csa.cpty_recovery) * np.maximum(-prices, 0.0)
    )
    discount = np.exp(
        -(paths.integrated_short_rate + (csa.gamma + csa.lam) * times[:, None])
    )
    integrals = np.trapezoid(discount * a, times, axis=0)
    est = float(integrals.mean())
    return est, float(integrals.std(ddof=1) / math.sqrt(integrals.size))


def generate_spot_paths(
    term: TermStructure,
    grid: np.ndarray,
    n_paths: int,
    seed: int,
    *,
    substeps: int = 4,
) -> PathGrid:
    """Spot-measure Euler paths with the short rate recorded."""
    return term.simulate(grid, n_paths, seed, measure="spot", substeps=substeps)
