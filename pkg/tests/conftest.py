"""Shared fixtures: small driver setups reused across test modules."""

from __future__ import annotations

import numpy as np
import pytest

from affinelibor.affine import AffineModelSpec, RiccatiFlow
from affinelibor.multicurve import (
    CalibratedSequences,
    InitialTermStructure,
    TenorStructure,
    calibrate,
    line_manifold,
)


def discount_curve(dates: np.ndarray) -> np.ndarray:
    """Synthetic decreasing discount factors used by several modules."""
    return np.exp(-0.02 * dates - 0.001 * dates**2)


@pytest.fixture(scope="session")
def spec3() -> AffineModelSpec:
    """Three independent square-root components over a ten-year horizon."""
    return AffineModelSpec(
        mean_reversion=np.array([0.8, 0.4, 0.2]),
        level=np.array([1.0, 1.0, 1.0]),
        vol_scale=np.array([0.4, 0.3, 0.2]),
        horizon=10.0,
    )


@pytest.fixture(scope="session")
def flow3(spec3) -> RiccatiFlow:
    return RiccatiFlow(spec3)


# -- a two-year multi-curve setup small enough for per-test fitting ----------


@pytest.fixture(scope="session")
def spec_mc() -> AffineModelSpec:
    return AffineModelSpec(
        mean_reversion=np.array([0.8, 0.5, 0.3]),
        level=np.array([1.0, 1.0, 1.0]),
        vol_scale=np.array([0.35, 0.25, 0.2]),
        horizon=2.0,
    )


@pytest.fixture(scope="session")
def flow_mc(spec_mc) -> RiccatiFlow:
    return RiccatiFlow(spec_mc)


@pytest.fixture(scope="session")
def tenor8() -> TenorStructure:
    return TenorStructure(dates=np.linspace(0.0, 2.0, 9), tenors={"3M": 1, "6M": 2})


@pytest.fixture(scope="session")
def init8(tenor8) -> InitialTermStructure:
    B = discount_curve(tenor8.dates)
    libor = {}
    for x, bump in (("3M", 0.0010), ("6M", 0.0020)):
        Bx = B[tenor8.sub_indices(x)]
        fwd = (Bx[:-1] / Bx[1:] - 1.0) / tenor8.delta_x(x)
        libor[x] = fwd + bump
    return InitialTermStructure(tenor=tenor8, ois_discount=B, libor=libor)


@pytest.fixture(scope="session")
def manifold_line():
    return line_manifold(np.array([1.5, 1.2, 1.0]))


@pytest.fixture(scope="session")
def seq8(flow_mc, init8, manifold_line) -> CalibratedSequences:
    return calibrate(flow_mc, init8, manifold_line)
