"""Multi-curve interest rate models driven by nonnegative affine processes.

The package is organized along the pipeline:

* :mod:`affinelibor.affine` — square-root diffusion catalog, Riccati flows,
  moment domains, the time-integrated extension, and path simulation.
* :mod:`affinelibor.multicurve` — discrete-tenor OIS/LIBOR model: parameter
  manifolds, martingale families, and calibration to initial term structures.
* :mod:`affinelibor.tenor` — continuous tenor extension: forward curves,
  parameter interpolation, bond prices, and the implied short rate.
* :mod:`affinelibor.xva` — basis-swap pricing under the spot measure and
  valuation-adjustment solvers.
* :mod:`affinelibor.scenario` / :mod:`affinelibor.reporting` /
  :mod:`affinelibor.pipeline` / :mod:`affinelibor.cli` — scenario files,
  delimited reports and figures, and the command-line pipeline.
"""

from .errors import (
    AffineLiborError,
    ComparisonError,
    DomainViolationError,
    FittingError,
    ScenarioError,
    StageError,
    UnsupportedCombinationError,
)

__version__ = "0.1.0"

__all__ = [
    "AffineLiborError",
    "ComparisonError",
    "DomainViolationError",
    "FittingError",
    "ScenarioError",
    "StageError",
    "UnsupportedCombinationError",
    "__version__",
]
