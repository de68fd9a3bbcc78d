"""Affine diffusion processes on the nonnegative orthant.

This module hosts the model primitives everything else is built from:

* :class:`AffineModelSpec` — admissible parameters of a vector of independent
  square-root diffusions (the shipped catalog), with jump terms carried as
  always-zero fields.
* :class:`RiccatiFlow` — numerical flows ``phi_t(u)``, ``psi_t(u)`` of the
  generalized Riccati equations, including gradients with respect to the
  argument obtained from the variational equations (no finite differences).
* :func:`moment_domain` — numerical detection of the exponential-moment box.
* :func:`extended_characteristics` / :func:`solve_riccati_inhomogeneous` —
  the time-integrated extension ``(X, int theta o X)`` and the generic
  backward Riccati solver with time-dependent characteristics.
* :func:`simulate_paths` — exact (noncentral chi-square) and Euler
  full-truncation path generation on a fixed grid.

All flow computations are pure functions of immutable inputs and are safe to
call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from ._util import readonly_array as _readonly
from .errors import DomainViolationError, UnsupportedCombinationError

__all__ = [
    "AffineModelSpec",
    "FlowSolution",
    "MomentDomain",
    "ExtendedCharacteristics",
    "PathGrid",
    "RiccatiFlow",
    "functional_characteristics",
    "solve_riccati",
    "mgf",
    "moment_domain",
    "extended_characteristics",
    "solve_riccati_inhomogeneous",
    "simulate_paths",
]

# Paths are generated in fixed-size chunks, each with its own counter-based
# substream spawned from the seed.  The chunk size is a constant so results
# do not depend on how chunks are scheduled.
_PATH_CHUNK = 16_384

_DEFAULT_RTOL = 1e-10
_DEFAULT_ATOL = 1e-10
_PSI_BOUND = 1e8


# ---------------------------------------------------------------------------
# model specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AffineModelSpec:
    """Independent square-root diffusions ``dX_i = lam_i (theta_i - X_i) dt
    + eta_i sqrt(X_i) dW_i`` on the nonnegative orthant, started at 1.

    The admissible drift/diffusion tuple is derived from the per-component
    parameters: ``b_i = lam_i * theta_i``, linear drift matrix
    ``beta[i] = -lam_i * e_i`` and ``alpha[i] = eta_i^2 * e_i e_i^T``.  Jump
    measures (``m``, ``mu``) are identically zero in this catalog and carried
    only so the functional characteristics read as the general
    linear-quadratic(-integral) forms.

    Args:
        mean_reversion: speeds ``lam_i > 0`` (1/years).
        level: long-run levels ``theta_i >= 0``.
        vol_scale: diffusion scales ``eta_i >= 0`` (0 degenerates to the
            deterministic mean-reversion ODE).
        horizon: terminal date ``T_N`` in years (> 0).
    """

    mean_reversion: np.ndarray
    level: np.ndarray
    vol_scale: np.ndarray
    horizon: float
    m: None = field(default=None, repr=False)   # jump measure of the state-independent part
    mu: None = field(default=None, repr=False)  # per-component jump measures

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.mean_reversion, dtype=float))
        theta = np.atleast_1d(np.asarray(self.level, dtype=float))
        eta = np.atleast_1d(np.asarray(self.vol_scale, dtype=float))
        if not (lam.shape == theta.shape == eta.shape) or lam.ndim != 1:
            raise ValueError("mean_reversion, level, vol_scale must be 1-d arrays of equal length")
        if not np.all(lam > 0):
            raise ValueError("mean-reversion speeds must be strictly positive")
        if not np.all(theta >= 0):
            raise ValueError("long-run levels must be nonnegative")
        if not np.all(eta >= 0):
            raise ValueError("diffusion scales must be nonnegative")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        object.__setattr__(self, "mean_reversion", _readonly(lam))
        object.__setattr__(self, "level", _readonly(theta))
        object.__setattr__(self, "vol_scale", _readonly(eta))
        object.__setattr__(self, "horizon", float(self.horizon))

    # -- derived admissible parameters ------------------------------------

    @property
    def dimension(self) -> int:
        return self.mean_reversion.shape[0]

    @property
    def x0(self) -> np.ndarray:
        """Canonical initial state (1, ..., 1)."""
        return _readonly(np.ones(self.dimension))

    @property
    def drift_constant(self) -> np.ndarray:
        """Admissible drift vector ``b`` (componentwise >= 0)."""
        return _readonly(self.mean_reversion * self.level)

    @property
    def drift_linear(self) -> np.ndarray:
        """Matrix whose row ``i`` is ``beta_i`` (here ``-lam_i e_i``)."""
        return _readonly(np.diag(-self.mean_reversion))

    @property
    def diffusion(self) -> np.ndarray:
        """Stacked diffusion matrices ``alpha[i] = eta_i^2 e_i e_i^T``."""
        d = self.dimension
        alpha = np.zeros((d, d, d))
        alpha[np.arange(d), np.arange(d), np.arange(d)] = self.vol_scale**2
        return _readonly(alpha)

    # -- functional characteristics ---------------------------------------

    def F(self, u: np.ndarray) -> np.ndarray:
        """Constant-coefficient characteristic ``F(u) = <b, u>``.

        Accepts a single d-vector or a stack of rows; returns scalar or
        a vector of scalars accordingly.
        """
        u = np.asarray(u, dtype=float)
        return u @ self.drift_constant

    def R(self, u: np.ndarray) -> np.ndarray:
        """State-coefficient characteristics ``R_i(u) = <beta_i, u> +
        <alpha_i u / 2, u>`` (zero jump integrals)."""
        u = np.asarray(u, dtype=float)
        lam, eta = self.mean_reversion, self.vol_scale
        return -lam * u + 0.5 * eta**2 * u * u

    def R_jacobian(self, u: np.ndarray) -> np.ndarray:
        """``dR_i/du_j``; diagonal for independent components."""
        u = np.asarray(u, dtype=float)
        diag = -self.mean_reversion + self.vol_scale**2 * u
        if u.ndim == 1:
            return np.diag(diag)
        out = np.zeros(u.shape[:-1] + (u.shape[-1], u.shape[-1]))
        idx = np.arange(u.shape[-1])
        out[..., idx, idx] = diag
        return out


def functional_characteristics(spec: AffineModelSpec, u: np.ndarray) -> tuple[float, np.ndarray]:
    """Evaluate ``(F(u), R(u))`` for a single argument vector.

    Raises:
        ValueError: if ``u`` does not have the model dimension.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (spec.dimension,):
        raise ValueError(f"argument has shape {u.shape}, expected ({spec.dimension},)")
    return float(spec.F(u)), spec.R(u)


# ---------------------------------------------------------------------------
# flow solutions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FlowSolution:
    """Riccati flow at lag ``t`` for argument ``u``: values and gradients.

    ``jac_psi[i, j] = d psi_i / d u_j`` (diagonal for independent
    components); ``grad_phi[j] = d phi / d u_j``.  Gradient fields are None
    when the solve was requested without the variational equations.
    """

    t: float
    u: np.ndarray
    phi: float
    psi: np.ndarray
    grad_phi: np.ndarray | None = None
    jac_psi: np.ndarray | None = None

    def mgf(self, x: np.ndarray) -> float | np.ndarray:
        """``exp(phi + <psi, x>)`` for a state (or stack of states)."""
        x = np.asarray(x, dtype=float)
        return np.exp(self.phi + x @ self.psi)


@dataclass(frozen=True)
class MomentDomain:
    """Box of exponents whose flow stays finite up to ``horizon``.

    ``upper[i]`` is the largest value of ``u_i`` (other components zero —
    the box is exact for independent components) for which ``psi`` does not
    blow up on ``[0, horizon]``; ``inf`` when no blow-up occurs below the
    search cap (degenerate/linear components).
    """

    horizon: float
    upper: np.ndarray
    resolution: float

    def __post_init__(self):
        object.__setattr__(self, "upper", _readonly(np.asarray(self.upper, dtype=float)))

    def contains(self, u: np.ndarray, margin: float = 0.0) -> bool:
        """Componentwise membership with a safety margin on the upper edge."""
        u = np.asarray(u, dtype=float)
        return bool(np.all(u < self.upper - margin))


# ---------------------------------------------------------------------------
# Riccati flow engine
# ---------------------------------------------------------------------------


class RiccatiFlow:
    """Adaptive Runge–Kutta integrator for the generalized Riccati system.

    Solves ``d phi/dt = F(psi)``, ``d psi/dt = R(psi)`` from ``phi_0 = 0``,
    ``psi_0 = u``, optionally augmented with the variational equations for
    ``grad_phi`` and ``jac_psi``.  Batched entry points integrate many
    argument vectors in one stacked system, which is how the calibration
    and interpolation layers stay fast; blocks are independent, so stacking
    does not change any individual solution.

    Blow-up is declared when any ``|psi_i|`` crosses ``psi_bound`` (or the
    step size underflows) and surfaces as :class:`DomainViolationError`
    carrying the event time.
    """

    def __init__(
        self,
        spec: AffineModelSpec,
        rtol: float = _DEFAULT_RTOL,
        atol: float = _DEFAULT_ATOL,
        psi_bound: float = _PSI_BOUND,
    ):
        self.spec = spec
        self.rtol = float(rtol)
        self.atol = float(atol)
        self.psi_bound = float(psi_bound)
        self._d = spec.dimension
        self._b = np.asarray(spec.drift_constant)
        self._lam = np.asarray(spec.mean_reversion)
        self._eta2 = np.asarray(spec.vol_scale) ** 2

    # -- right-hand sides ---------------------------------------------------

    def _rhs_plain(self, k: int) -> Callable[[float, np.ndarray], np.ndarray]:
        d, b, lam, eta2 = self._d, self._b, self._lam, self._eta2

        def rhs(_t, y):
            z = y.reshape(k, 1 + d)
            psi = z[:, 1:]
            out = np.empty_like(z)
            out[:, 0] = psi @ b
            out[:, 1:] = -lam * psi + 0.5 * eta2 * psi * psi
            return out.ravel()

        return rhs

    def _rhs_grad(self, k: int) -> Callable[[float, np.ndarray], np.ndarray]:
        d, b, lam, eta2 = self._d, self._b, self._lam, self._eta2

        def rhs(_t, y):
            z = y.reshape(k, 1 + 2 * d + d * d)
            psi = z[:, 1 : 1 + d]
            jac = z[:, 1 + 2 * d :].reshape(k, d, d)
            out = np.empty_like(z)
            out[:, 0] = psi @ b
            out[:, 1 : 1 + d] = -lam * psi + 0.5 * eta2 * psi * psi
            # d/dt grad_phi = jac^T grad F,  grad F = b
            out[:, 1 + d : 1 + 2 * d] = np.einsum("kij,i->kj", jac, b)
            # d/dt jac = (dR/dpsi) jac; dR/dpsi is diagonal here -> row scaling
            dr = -lam + eta2 * psi  # (k, d)
            out[:, 1 + 2 * d :] = (dr[:, :, None] * jac).reshape(k, d * d)
            return out.ravel()

        return rhs

    def _block_size(self, gradients: bool) -> int:
        d = self._d
        return 1 + 2 * d + d * d if gradients else 1 + d

    def _initial_state(self, args: np.ndarray, gradients: bool) -> np.ndarray:
        k, d = args.shape
        y0 = np.zeros((k, self._block_size(gradients)))
        y0[:, 1 : 1 + d] = args
        if gradients:
            y0[:, 1 + 2 * d :] = np.broadcast_to(np.eye(d).ravel(), (k, d * d))
        return y0

    def _integrate(
        self,
        args: np.ndarray,
        t_eval: np.ndarray,
        gradients: bool,
    ) -> np.ndarray:
        """Integrate a stacked system; returns states (len(t_eval), k, block)."""
        k, d = args.shape
        y0 = self._initial_state(args, gradients)
        t_end = float(t_eval[-1])
        if t_end == 0.0:
            return np.repeat(y0[None, :, :], len(t_eval), axis=0)
        block = self._block_size(gradients)
        psi_cols = (np.arange(k)[:, None] * block + 1 + np.arange(d)[None, :]).ravel()
        bound = self.psi_bound

        def blow_up(_t, y):
            return bound - np.max(np.abs(y[psi_cols]))

        blow_up.terminal = True
        rhs = self._rhs_grad(k) if gradients else self._rhs_plain(k)
        sol = solve_ivp(
            rhs,
            (0.0, t_end),
            y0.ravel(),
            method="RK45",
            t_eval=np.asarray(t_eval, dtype=float),
            rtol=self.rtol,
            atol=self.atol,
            events=blow_up,
            dense_output=False,
        )
        if sol.status == 1:  # terminated by the blow-up event
            t_ev = float(sol.t_events[0][0])
            raise DomainViolationError(
                f"Riccati flow exceeded |psi| = {bound:g} at t = {t_ev:.6g}",
                blow_up_time=t_ev,
            )
        if not sol.success:
            raise DomainViolationError(
                f"Riccati integration failed before t = {t_end:g}: {sol.message}",
                blow_up_time=float(sol.t[-1]) if sol.t.size else 0.0,
            )
        return sol.y.T.reshape(len(t_eval), k, block)

    # -- public evaluation --------------------------------------------------

    def solve(self, t: float, u: np.ndarray, gradients: bool = True) -> FlowSolution:
        """Flow at a single lag ``t`` for a single argument ``u``."""
        u = np.asarray(u, dtype=float)
        if u.shape != (self._d,):
            raise ValueError(f"argument has shape {u.shape}, expected ({self._d},)")
        if t < 0:
            raise ValueError("lag must be nonnegative")
        state = self._integrate(u[None, :], np.array([t]), gradients)[0, 0]
        d = self._d
        phi, psi = float(state[0]), state[1 : 1 + d].copy()
        if not gradients:
            return FlowSolution(t=float(t), u=u, phi=phi, psi=psi)
        return FlowSolution(
            t=float(t),
            u=u,
            phi=phi,
            psi=psi,
            grad_phi=state[1 + d : 1 + 2 * d].copy(),
            jac_psi=state[1 + 2 * d :].reshape(d, d).copy(),
        )

    def at(
        self, u: np.ndarray, lags: np.ndarray, gradients: bool = False
    ) -> dict[str, np.ndarray]:
        """One argument, many lags (single integration with readouts).

        Returns a dict with ``phi`` (L,), ``psi`` (L, d) and, if requested,
        ``grad_phi`` (L, d), ``jac_psi`` (L, d, d), ordered like ``lags``.
        """
        u = np.asarray(u, dtype=float)
        lags = np.asarray(lags, dtype=float)
        if np.any(lags < 0):
            raise ValueError("lags must be nonnegative")
        uniq, inv = np.unique(lags, return_inverse=True)
        states = self._integrate(u[None, :], uniq, gradients)[:, 0, :]  # (L*, block)
        states = states[inv]
        d = self._d
        out = {"phi": states[:, 0].copy(), "psi": states[:, 1 : 1 + d].copy()}
        if gradients:
            out["grad_phi"] = states[:, 1 + d : 1 + 2 * d].copy()
            out["jac_psi"] = states[:, 1 + 2 * d :].reshape(-1, d, d).copy()
        return out

    def pairs(
        self, args: np.ndarray, lags: np.ndarray, gradients: bool = False
    ) -> dict[str, np.ndarray]:
        """Many (argument, lag) pairs, integrated in lag-sorted chunks.

        ``args`` is (K, d), ``lags`` broadcastable to (K,).  Within a chunk a
        single stacked system is integrated to the largest lag and each block
        is read out at its own lag.
        """
        args = np.atleast_2d(np.asarray(args, dtype=float))
        k = args.shape[0]
        lags = np.broadcast_to(np.asarray(lags, dtype=float), (k,))
        if np.any(lags < 0):
            raise ValueError("lags must be nonnegative")
        block = self._block_size(gradients)
        chunk = max(1, 4096 // block)
        order = np.argsort(lags, kind="stable")
        d = self._d
        phi = np.empty(k)
        psi = np.empty((k, d))
        gphi = np.empty((k, d)) if gradients else None
        jac = np.empty((k, d, d)) if gradients else None
        for a in range(0, k, chunk):
            idx = order[a : a + chunk]
            sub_lags = lags[idx]
            uniq, inv = np.unique(sub_lags, return_inverse=True)
            states = self._integrate(args[idx], uniq, gradients)  # (L*, m, block)
            picked = states[inv, np.arange(len(idx))]  # (m, block)
            phi[idx] = picked[:, 0]
            psi[idx] = picked[:, 1 : 1 + d]
            if gradients:
                gphi[idx] = picked[:, 1 + d : 1 + 2 * d]
                jac[idx] = picked[:, 1 + 2 * d :].reshape(-1, d, d)
        out = {"phi": phi, "psi": psi}
        if gradients:
            out["grad_phi"] = gphi
            out["jac_psi"] = jac
        return out

    def log_m0(self, args: np.ndarray) -> np.ndarray:
        """``log M_0^u = phi_{T_N}(u) + <psi_{T_N}(u), x0>`` for stacked args."""
        args = np.atleast_2d(np.asarray(args, dtype=float))
        res = self.pairs(args, np.full(args.shape[0], self.spec.horizon))
        return res["phi"] + res["psi"] @ self.spec.x0


def solve_riccati(
    spec: AffineModelSpec, t: float, u: np.ndarray, *, flow: RiccatiFlow | None = None
) -> FlowSolution:
    """Flow of the generalized Riccati equations with gradients.

    Thin wrapper constructing (or reusing) a :class:`RiccatiFlow`.
    """
    return (flow or RiccatiFlow(spec)).solve(t, u, gradients=True)


def mgf(
    spec: AffineModelSpec,
    t: float,
    u: np.ndarray,
    x: np.ndarray,
    *,
    flow: RiccatiFlow | None = None,
) -> float:
    """Exponential moment ``E[exp<u, X_t> | X_0 = x] = exp(phi + <psi, x>)``."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("state must lie in the nonnegative orthant")
    sol = (flow or RiccatiFlow(spec)).solve(t, u, gradients=False)
    return float(sol.mgf(x))


# ---------------------------------------------------------------------------
# moment domain detection
# ---------------------------------------------------------------------------


def moment_domain(
    spec: AffineModelSpec,
    horizon: float,
    *,
    resolution: float = 1e-6,
    search_cap: float = 1e7,
    flow: RiccatiFlow | None = None,
) -> MomentDomain:
    """Detect the per-component blow-up bounds by bisection.

    For each component the scalar exponent is doubled until the flow blows
    up on ``[0, horizon]`` (or the cap is reached, in which case the bound
    is reported as ``inf``), then bisected to ``resolution``.
    """
    if not 0 < horizon <= spec.horizon:
        raise ValueError("horizon must lie in (0, T_N]")
    fl = flow or RiccatiFlow(spec)
    d = spec.dimension

    def finite(c: float, i: int) -> bool:
        u = np.zeros(d)
        u[i] = c
        try:
            fl.solve(horizon, u, gradients=False)
            return True
        except DomainViolationError:
            return False

    upper = np.empty(d)
    for i in range(d):
        lo, hi = 0.0, 1.0
        while finite(hi, i):
            lo = hi
            hi *= 2.0
            if hi > search_cap:
                break
        if hi > search_cap:
            upper[i] = np.inf
            continue
        while hi - lo > resolution:
            mid = 0.5 * (lo + hi)
            if finite(mid, i):
                lo = mid
            else:
                hi = mid
        upper[i] = lo
    return MomentDomain(horizon=float(horizon), upper=upper, resolution=float(resolution))


# ---------------------------------------------------------------------------
# time-integrated extension
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExtendedCharacteristics:
    """Characteristics of ``(X, Y)`` with ``Y_t = int_0^t theta_s o X_s ds``.

    The weight ``theta`` is a piecewise-constant table: ``values[i]`` applies
    on ``[times[i], times[i+1])`` with the last slab extending to infinity.
    The pair is time-inhomogeneous affine on the doubled state with
    ``F~(t, w) = F(w_X)`` and ``R~(t, w) = (R(w_X) + theta_t o w_Y, 0)``
    — the Y-block of ``R~`` vanishes identically.
    """

    spec: AffineModelSpec
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if times.ndim != 1 or len(times) != values.shape[0]:
            raise ValueError("need one weight row per table time")
        if times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise ValueError("table times must start at 0 and increase")
        if values.shape[1] != self.spec.dimension:
            raise ValueError("weight rows must have the model dimension")
        if np.any(values < 0):
            raise ValueError("weights must be nonnegative")
        object.__setattr__(self, "times", _readonly(times))
        object.__setattr__(self, "values", _readonly(values))

    @property
    def dimension(self) -> int:
        return 2 * self.spec.dimension

    def theta(self, t: float) -> np.ndarray:
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.values[max(idx, 0)]

    def F(self, _t: float, w: np.ndarray) -> float:
        d = self.spec.dimension
        return float(self.spec.F(np.asarray(w, dtype=float)[:d]))

    def R(self, t: float, w: np.ndarray) -> np.ndarray:
        d = self.spec.dimension
        w = np.asarray(w, dtype=float)
        out = np.zeros(2 * d)
        out[:d] = self.spec.R(w[:d]) + self.theta(t) * w[d:]
        return out

    def joint_flow(
        self, s: float, t: float, u: np.ndarray, *, rtol: float = _DEFAULT_RTOL, atol: float = _DEFAULT_ATOL
    ) -> tuple[float, np.ndarray]:
        """Backward flow ``(phi~_{s,t}, psi~_{s,t})`` of the doubled system."""
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dimension,):
            raise ValueError(f"argument has shape {u.shape}, expected ({self.dimension},)")
        return solve_riccati_inhomogeneous(
            self.F, self.R, s, t, u, rtol=rtol, atol=atol, breakpoints=self.times
        )

    def joint_mgf(self, t: float, u_x: np.ndarray, u_y: np.ndarray, x0: np.ndarray | None = None) -> float:
        """``E[exp(<u_X, X_t> + <u_Y, Y_t>)]`` with ``Y_0 = 0``."""
        d = self.spec.dimension
        u = np.concatenate([np.asarray(u_x, dtype=float), np.asarray(u_y, dtype=float)])
        phi, psi = self.joint_flow(0.0, t, u)
        x = self.spec.x0 if x0 is None else np.asarray(x0, dtype=float)
        return float(np.exp(phi + psi[:d] @ x))


def extended_characteristics(
    spec: AffineModelSpec, times: np.ndarray, values: np.ndarray
) -> ExtendedCharacteristics:
    """Build the doubled-state characteristics for a piecewise-constant weight."""
    return ExtendedCharacteristics(spec=spec, times=times, values=values)


def solve_riccati_inhomogeneous(
    F_fun: Callable[[float, np.ndarray], float],
    R_fun: Callable[[float, np.ndarray], np.ndarray],
    s: float,
    t: float,
    u: np.ndarray,
    *,
    rtol: float = _DEFAULT_RTOL,
    atol: float = _DEFAULT_ATOL,
    breakpoints: Sequence[float] | None = None,
    psi_bound: float = _PSI_BOUND,
) -> tuple[float, np.ndarray]:
    """Backward Riccati solve with time-dependent characteristics.

    Integrates ``-d/ds phi_{s,t} = F(s, psi_{s,t})``,
    ``-d/ds psi_{s,t} = R(s, psi_{s,t})`` from the terminal conditions
    ``phi_{t,t} = 0``, ``psi_{t,t} = u`` down to time ``s``.

    Args:
        F_fun, R_fun: time-dependent characteristics (time, vector) -> value.
        s, t: evaluation time and terminal time, ``s <= t``.
        u: terminal argument.
        breakpoints: optional times where the characteristics are allowed to
            be discontinuous; integration is chained across them.

    Returns:
        ``(phi_st, psi_st)``.
    """
    if s > t:
        raise ValueError("need s <= t")
    u = np.asarray(u, dtype=float)
    if s == t:
        return 0.0, u.copy()

    # tau = t - sigma; y(tau) = psi_{t - tau, t}
    def rhs(tau, y):
        clock = t - tau
        out = np.empty_like(y)
        out[0] = F_fun(clock, y[1:])
        out[1:] = R_fun(clock, y[1:])
        return out

    def blow_up(_tau, y):
        return psi_bound - np.max(np.abs(y[1:]))

    blow_up.terminal = True

    cuts = [0.0, t - s]
    if breakpoints is not None:
        for bp in np.asarray(breakpoints, dtype=float):
            tau_bp = t - bp
            if 0.0 < tau_bp < t - s:
                cuts.append(tau_bp)
    cuts = sorted(set(cuts))

    y = np.concatenate([[0.0], u])
    for a, b in zip(cuts[:-1], cuts[1:]):
        sol = solve_ivp(rhs, (a, b), y, method="RK45", rtol=rtol, atol=atol, events=blow_up)
        if sol.status == 1:
            tau_ev = float(sol.t_events[0][0])
            raise DomainViolationError(
                f"inhomogeneous Riccati flow exceeded |psi| = {psi_bound:g}",
                blow_up_time=t - tau_ev,
            )
        if not sol.success:
            raise DomainViolationError(
                f"inhomogeneous Riccati integration failed: {sol.message}",
                blow_up_time=t - float(sol.t[-1]) if sol.t.size else t,
            )
        y = sol.y[:, -1]
    return float(y[0]), y[1:].copy()


# ---------------------------------------------------------------------------
# path simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathGrid:
    """Simulated driver paths on a fixed time grid, immutable once built.

    ``states`` has shape (len(times), n_paths, d).  The short-rate fields
    are populated when an affine integrand is recorded during simulation;
    ``integrated_short_rate[l]`` is the trapezoidal ``int_0^{t_l} r ds``
    along each path (accumulated at substep resolution under Euler).
    """

    times: np.ndarray
    states: np.ndarray
    seed: int
    scheme: str
    measure: str = "terminal"
    short_rate: np.ndarray | None = None
    integrated_short_rate: np.ndarray | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 3 or states.shape[0] != times.shape[0]:
            raise ValueError("states must have shape (len(times), n_paths, d)")
        for name in ("short_rate", "integrated_short_rate"):
            arr = getattr(self, name)
            if arr is not None and arr.shape != states.shape[:2]:
                raise ValueError(f"{name} must have shape (len(times), n_paths)")
        object.__setattr__(self, "times", _readonly(times))
        object.__setattr__(self, "states", _readonly(states))
        for name in ("short_rate", "integrated_short_rate"):
            arr = getattr(self, name)
            if arr is not None:
                object.__setattr__(self, name, _readonly(arr))

    @property
    def n_paths(self) -> int:
        return self.states.shape[1]

    @property
    def dimension(self) -> int:
        return self.states.shape[2]

    @property
    def discount_factors(self) -> np.ndarray:
        """``exp(-int_0^{t_l} r ds)`` per step and path."""
        if self.integrated_short_rate is None:
            raise ValueError("no short-rate integrals on this grid")
        return np.exp(-self.integrated_short_rate)


def path_chunks(n_paths: int, seed: int):
    """Deterministic (slice, generator) pairs partitioning the path set.

    Each chunk owns a counter-based substream spawned from the seed, so the
    draws are identical no matter how chunks are scheduled.
    """
    for c, start in enumerate(range(0, n_paths, _PATH_CHUNK)):
        stop = min(start + _PATH_CHUNK, n_paths)
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(c,))
        yield slice(start, stop), np.random.Generator(np.random.Philox(ss))


def _exact_step(
    rng: np.random.Generator,
    x: np.ndarray,
    dt: float,
    lam: np.ndarray,
    theta: np.ndarray,
    eta: np.ndarray,
) -> np.ndarray:
    """Exact square-root-diffusion transition over ``dt``, componentwise."""
    out = np.empty_like(x)
    for i in range(x.shape[1]):
        li, ti, ei = lam[i], theta[i], eta[i]
        decay = math.exp(-li * dt)
        if ei == 0.0:
            out[:, i] = ti + (x[:, i] - ti) * decay
            continue
        c = ei * ei * (1.0 - decay) / (4.0 * li)
        nc = x[:, i] * decay / c
        df = 4.0 * li * ti / (ei * ei)
        if df > 0.0:
            out[:, i] = c * rng.noncentral_chisquare(df, nc)
        else:
            # zero long-run level: the transition is a Poisson mixture of
            # central chi-squares with an atom at zero
            n = rng.poisson(0.5 * nc)
            w = np.zeros_like(nc)
            pos = n > 0
            if np.any(pos):
                w[pos] = rng.chisquare(2.0 * n[pos])
            out[:, i] = c * w
    return out


def euler_full_truncation_step(
    x: np.ndarray,
    dt: float,
    b: np.ndarray,
    beta_eff: np.ndarray,
    eta: np.ndarray,
    z: np.ndarray,
) -> np.ndarray:
    """One Euler step with the negative part clipped in every coefficient.

    ``beta_eff`` rows are the (possibly drift-modified) linear coefficients
    ``beta_i``; the state is clipped at zero after the update so paths stay
    in the orthant.
    """
    xp = np.maximum(x, 0.0)
    drift = b + xp @ beta_eff
    return np.maximum(x + drift * dt + eta * np.sqrt(xp * dt) * z, 0.0)


def simulate_paths(
    spec: AffineModelSpec,
    grid: np.ndarray,
    n_paths: int,
    seed: int,
    *,
    scheme: str = "exact",
    drift_modifier: Callable[[float], np.ndarray] | None = None,
    substeps: int = 4,
    integrand: Callable[[float], tuple[float, np.ndarray]] | None = None,
    measure: str = "terminal",
) -> PathGrid:
    """Simulate driver paths on a reporting grid.

    Args:
        grid: strictly increasing times starting at 0.
        scheme: ``"exact"`` (noncentral chi-square transitions, terminal
            measure) or ``"euler"`` (full truncation).
        drift_modifier: optional map ``t -> (d, d)`` matrix added to the
            linear drift coefficients ``beta_i`` (rows), e.g. the
            spot-measure shift ``alpha_i Q_t``; Euler only, evaluated at the
            left end of each substep.
        substeps: Euler substeps per reporting step (the substep states are
            not stored).
        integrand: optional affine functional ``t -> (c_t, g_t)`` defining
            ``v_t = c_t + <g_t, X_t>`` (e.g. the short rate).  When given,
            ``v`` is recorded at the grid times and its running trapezoidal
            integral is accumulated at substep resolution, filling the
            ``short_rate``/``integrated_short_rate`` fields.
        measure: label stored on the result (``"terminal"`` or ``"spot"``);
            the caller is responsible for matching it to the drift.

    Returns:
        PathGrid on ``grid`` with the states and, if requested, the
        integrand records.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing and start at 0")
    if n_paths < 1:
        raise ValueError("need n_paths >= 1")
    if scheme not in ("exact", "euler"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if scheme == "exact" and drift_modifier is not None:
        raise UnsupportedCombinationError(
            "exact transition sampling is unavailable with a drift modifier; use scheme='euler'"
        )
    if substeps < 1:
        raise ValueError("need substeps >= 1")
    if measure not in ("terminal", "spot"):
        raise ValueError(f"unknown measure {measure!r}")

    d = spec.dimension
    lam, theta, eta = spec.mean_reversion, spec.level, spec.vol_scale
    b, beta = spec.drift_constant, spec.drift_linear
    L = len(grid)
    states = np.empty((L, n_paths, d))
    states[0] = 1.0
    rate = integral = None
    if integrand is not None:
        rate = np.empty((L, n_paths))
        integral = np.empty((L, n_paths))

    for sl, rng in path_chunks(n_paths, seed):
        x = np.ones((sl.stop - sl.start, d))
        if integrand is not None:
            c0, g0 = integrand(0.0)
            v = c0 + x @ g0
            rate[0, sl] = v
            integral[0, sl] = 0.0
            acc = np.zeros(x.shape[0])
        for l in range(L - 1):
            dt = grid[l + 1] - grid[l]
            if scheme == "exact":
                x = _exact_step(rng, x, dt, lam, theta, eta)
                if integrand is not None:
                    c_t, g_t = integrand(grid[l + 1])
                    v_new = c_t + x @ g_t
                    acc += 0.5 * (v + v_new) * dt
                    v = v_new
            else:
                h = dt / substeps
                for j in range(substeps):
                    t_sub = grid[l] + j * h
                    beta_eff = beta if drift_modifier is None else beta + drift_modifier(t_sub)
                    z = rng.standard_normal((x.shape[0], d))
                    x = euler_full_truncation_step(x, h, b, beta_eff, eta, z)
                    if integrand is not None:
                        c_t, g_t = integrand(t_sub + h)
                        v_new = c_t + x @ g_t
                        acc += 0.5 * (v + v_new) * h
                        v = v_new
            states[l + 1, sl] = x
            if integrand is not None:
                rate[l + 1, sl] = v
                integral[l + 1, sl] = acc

    return PathGrid(
        times=grid,
        states=states,
        seed=int(seed),
        scheme=scheme,
        measure=measure,
        short_rate=rate,
        integrated_short_rate=integral,
    )
