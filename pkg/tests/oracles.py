"""Hand-coded reference values for the square-root diffusion catalog.

Everything here is written directly from the closed-form transform of the
one-dimensional square-root process, independent of the package's numerical
solvers, so tests can compare the two routes.
"""

from __future__ import annotations

import math

import numpy as np


def cir_denominator(t, u, lam, eta):
    """``1 - u eta^2 (1 - e^{-lam t}) / (2 lam)`` — positive iff the flow is finite."""
    t, u, lam, eta = map(np.asarray, (t, u, lam, eta))
    return 1.0 - u * eta**2 * (1.0 - np.exp(-lam * t)) / (2.0 * lam)


def cir_psi(t, u, lam, eta):
    """Closed-form state coefficient of ``log E[exp(u X_t)]``."""
    t, u, lam, eta = map(np.asarray, (t, u, lam, eta))
    return u * np.exp(-lam * t) / cir_denominator(t, u, lam, eta)


def cir_phi(t, u, lam, theta, eta):
    """Closed-form constant coefficient; linear limit when ``eta == 0``."""
    t, u, lam, theta, eta = map(np.asarray, (t, u, lam, theta, eta))
    den = cir_denominator(t, u, lam, eta)
    out = np.where(
        eta > 0,
        -(2.0 * lam * theta / np.where(eta > 0, eta**2, 1.0)) * np.log(np.where(den > 0, den, np.nan)),
        theta * u * (1.0 - np.exp(-lam * t)),
    )
    return out


def cir_u_max(T, lam, eta):
    """Largest scalar exponent with a finite flow on ``[0, T]``."""
    return 2.0 * lam / (eta**2 * (1.0 - math.exp(-lam * T)))


def cir_blow_up_time(u, lam, eta):
    """Explosion time of the flow started at ``u > cir_u_max(inf)``."""
    return -math.log(1.0 - 2.0 * lam / (u * eta**2)) / lam


def cir_mean(t, x0, lam, theta):
    """``E[X_t] = theta + (x0 - theta) e^{-lam t}``."""
    t, x0, lam, theta = map(np.asarray, (t, x0, lam, theta))
    return theta + (x0 - theta) * np.exp(-lam * t)


def cir_variance(t, x0, lam, theta, eta):
    """Transition variance of the square-root process."""
    t, x0, lam, theta, eta = map(np.asarray, (t, x0, lam, theta, eta))
    e1 = np.exp(-lam * t)
    return x0 * eta**2 / lam * (e1 - e1**2) + theta * eta**2 / (2.0 * lam) * (1.0 - e1) ** 2


def deterministic_state(t, x0, lam, theta):
    """State of the noise-free mean-reversion ODE (eta = 0)."""
    return cir_mean(t, x0, lam, theta)


def deterministic_weighted_integral(t, x0, lam, theta, knot_times, knot_values):
    """``int_0^t w_s x_s ds`` for the noise-free path and a piecewise-constant
    weight table, slab by slab in closed form."""
    edges = np.append(np.asarray(knot_times, dtype=float), np.inf)
    total = 0.0
    for i, w in enumerate(np.asarray(knot_values, dtype=float)):
        a, b = min(edges[i], t), min(edges[i + 1], t)
        if b <= a:
            continue
        piece = theta * (b - a) + (x0 - theta) * (math.exp(-lam * a) - math.exp(-lam * b)) / lam
        total += w * piece
    return total
