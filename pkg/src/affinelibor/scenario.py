"""Scenario files: a JSON document plus referenced curve CSVs.

A scenario bundles everything an end-to-end run needs: the driver model,
the tenor grid, the initial discount and LIBOR curves (external CSV files),
the fitting manifold, the interpolation kinds to run, the exposure swap,
the close-out conventions, and the simulation sizes.  ``load_scenario``
validates the document and resolves every file reference; a synthetic
scenario mimicking the shape of a liquid two-tenor market ships with the
package and is written out by :func:`write_default_scenario`.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .affine import AffineModelSpec
from .errors import ScenarioError
from .multicurve import (
    InitialTermStructure,
    TenorStructure,
    initial_term_structure_from_csv,
)
from .tenor import (
    INTERPOLATION_KINDS,
    NelsonSiegelCurve,
    TableForwardCurve,
    verify_forward_curve_consistency,
)
from .xva import BasisSwapSpec, CSASpec, default_csa_set

# short labels used in CLI flags and output file names
KIND_ALIASES = {
    "if1": "curve-fit",
    "if2": "linear",
    "if3": "spline-hybrid",
    "if4": "monotone",
}
KIND_LABELS = {v: k for k, v in KIND_ALIASES.items()}

DEFAULT_SCENARIO_NAME = "synthetic-default"


def normalize_kind(name: str) -> tuple[str, str]:
    """Return ``(alias, canonical)`` for an interpolator name."""
    low = str(name).lower()
    canonical = KIND_ALIASES.get(low, low)
    if canonical not in INTERPOLATION_KINDS:
        raise ScenarioError(f"unknown interpolator {name!r}")
    return KIND_LABELS[canonical], canonical


@dataclass(frozen=True)
class SimulationSettings:
    """Path-bundle sizes and the master seed."""

    n_paths: int = 100_000
    n_steps: int = 200
    seed: int = 42
    substeps: int = 4

    def __post_init__(self):
        if self.n_paths < 2 or self.n_steps < 2:
            raise ScenarioError("need at least 2 paths and 2 steps")
        if self.substeps < 1:
            raise ScenarioError("substeps must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ScenarioError("seed must fit in an unsigned 64-bit integer")


@dataclass(frozen=True)
class ManifoldSpec:
    """Shape of the fitting manifold.

    ``style`` selects the constructor: a ``"staircase"`` of axis-parallel
    edges with rounded corners (one axis per sector via ``axis_order``,
    corner radius fraction ``rounding``), or ``"staged"`` straight sectors
    that shed one driving component across each of two tangent arcs
    (``component_order`` gives the shedding order, ``turn_degrees`` the arc
    turn angles, far arc first).
    """

    style: str
    knot_indices: tuple[int, ...]
    axis_order: tuple[int, ...] = ()
    rounding: float = 0.35
    component_order: tuple[int, ...] = ()
    turn_degrees: tuple[float, float] = (35.0, 45.0)


@dataclass(frozen=True)
class Scenario:
    """A fully resolved scenario, ready to run."""

    name: str
    model: AffineModelSpec
    tenor: TenorStructure
    init: InitialTermStructure
    manifold: ManifoldSpec
    interpolators: tuple[str, ...]  # aliases (if1, if2, ...)
    swap: BasisSwapSpec
    fair_spread: bool  # resolve the swap spread at run time
    csas: tuple[CSASpec, ...]
    sim: SimulationSettings
    forward_curve: NelsonSiegelCurve | TableForwardCurve | None = None
    source_hashes: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @property
    def kinds(self) -> tuple[tuple[str, str], ...]:
        """``(alias, canonical)`` pairs in run order."""
        return tuple(normalize_kind(a) for a in self.interpolators)


# ---------------------------------------------------------------------------
# loading and validation
# ---------------------------------------------------------------------------


def _require(data: dict, key: str, context: str):
    if key not in data:
        raise ScenarioError(f"{context}: missing required key {key!r}")
    return data[key]


def _file_sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _build_manifold_spec(block: dict, dimension: int, n_periods: int) -> ManifoldSpec:
    style = str(block.get("style", "staged" if "component_order" in block else "staircase"))
    knots = tuple(int(k) for k in _require(block, "knot_indices", "manifold"))
    if any(k2 <= k1 for k1, k2 in zip(knots[:-1], knots[1:])):
        raise ScenarioError("manifold: knot indices must be strictly increasing")
    if knots and not (0 < knots[0] and knots[-1] < n_periods):
        raise ScenarioError(f"manifold: knot indices must lie inside (0, {n_periods})")

    if style == "staircase":
        axes = tuple(int(a) for a in _require(block, "axis_order", "manifold"))
        rounding = float(block.get("rounding", 0.35))
        if len(axes) != len(knots) + 1:
            raise ScenarioError("manifold: need one axis per sector (one more than knots)")
        if any(not 0 <= a < dimension for a in axes):
            raise ScenarioError("manifold: axis indices must address model components")
        if not 0.0 <= rounding < 1.0:
            raise ScenarioError("manifold: rounding must lie in [0, 1)")
        return ManifoldSpec(style=style, knot_indices=knots, axis_order=axes, rounding=rounding)

    if style == "staged":
        order = tuple(int(c) for c in _require(block, "component_order", "manifold"))
        turns = tuple(float(t) for t in block.get("turn_degrees", (35.0, 45.0)))
        if len(knots) != 4:
            raise ScenarioError("manifold: staged style needs exactly four knot indices")
        if len(order) != 3 or len(set(order)) != 3:
            raise ScenarioError("manifold: component_order must list three distinct components")
        if any(not 0 <= c < dimension for c in order):
            raise ScenarioError("manifold: component indices must address model components")
        if len(turns) != 2 or any(not 0.0 < t <= 90.0 for t in turns):
            raise ScenarioError("manifold: turn_degrees must be two angles in (0, 90]")
        return ManifoldSpec(
            style=style, knot_indices=knots, component_order=order, turn_degrees=turns
        )

    raise ScenarioError(f"manifold: unknown style {style!r}")


def _build_forward_curve(block: dict, base_dir: Path, hashes: dict):
    kind = _require(block, "type", "forward_curve")
    if kind in ("nelson_siegel", "nelson-siegel"):
        try:
            return NelsonSiegelCurve(
                beta0=float(_require(block, "beta0", "forward_curve")),
                beta1=float(_require(block, "beta1", "forward_curve")),
                beta2=float(_require(block, "beta2", "forward_curve")),
                decay=float(_require(block, "decay", "forward_curve")),
            )
        except ValueError as exc:
            raise ScenarioError(f"forward_curve: {exc}") from None
    if kind == "table":
        path = base_dir / _require(block, "csv", "forward_curve")
        if not path.is_file():
            raise ScenarioError(f"forward_curve: file not found: {path}")
        hashes[str(path.name)] = _file_sha256(path)
        rows = np.genfromtxt(path, delimiter=",", names=True)
        try:
            times = np.atleast_1d(rows["maturity_years"])
            values = np.atleast_1d(rows["forward_rate"])
        except (KeyError, ValueError):
            raise ScenarioError(
                f"{path}: expected columns maturity_years, forward_rate"
            ) from None
        if np.any(np.isnan(times)) or np.any(np.isnan(values)):
            raise ScenarioError(f"{path}: non-numeric entry")
        try:
            return TableForwardCurve(times, values)
        except ValueError as exc:
            raise ScenarioError(f"{path}: {exc}") from None
    raise ScenarioError(f"forward_curve: unknown type {kind!r}")


def scenario_from_dict(data: dict, base_dir: Path) -> Scenario:
    """Build and validate a :class:`Scenario` from a parsed JSON document.

    File references are resolved relative to ``base_dir``; every referenced
    file must exist.
    """
    base_dir = Path(base_dir)
    name = str(data.get("name", "unnamed"))

    model_block = _require(data, "model", "scenario")
    try:
        model = AffineModelSpec(
            mean_reversion=np.asarray(_require(model_block, "mean_reversion", "model"), dtype=float),
            level=np.asarray(_require(model_block, "level", "model"), dtype=float),
            vol_scale=np.asarray(_require(model_block, "vol_scale", "model"), dtype=float),
            horizon=float(_require(model_block, "horizon", "model")),
        )
    except ValueError as exc:
        raise ScenarioError(f"model: {exc}") from None

    tenor_block = _require(data, "tenor", "scenario")
    n_periods = int(_require(tenor_block, "n_periods", "tenor"))
    tenors = {str(k): int(v) for k, v in _require(tenor_block, "tenors", "tenor").items()}
    try:
        tenor = TenorStructure(
            dates=np.linspace(0.0, model.horizon, n_periods + 1), tenors=tenors
        )
    except ValueError as exc:
        raise ScenarioError(f"tenor: {exc}") from None

    hashes: dict = {}
    curves_block = _require(data, "initial_curves", "scenario")
    discount_path = base_dir / _require(curves_block, "discount_csv", "initial_curves")
    libor_path = base_dir / _require(curves_block, "libor_csv", "initial_curves")
    for p in (discount_path, libor_path):
        if not p.is_file():
            raise ScenarioError(f"initial_curves: file not found: {p}")
        hashes[p.name] = _file_sha256(p)
    init = initial_term_structure_from_csv(tenor, discount_path, libor_path)

    manifold_block = _require(data, "manifold", "scenario")
    manifold = _build_manifold_spec(manifold_block, model.dimension, n_periods)

    aliases = tuple(
        normalize_kind(k)[0] for k in _require(data, "interpolators", "scenario")
    )
    if len(aliases) != len(set(aliases)):
        raise ScenarioError("interpolators: duplicate kinds")
    if not aliases:
        raise ScenarioError("interpolators: need at least one kind")

    swap_block = _require(data, "swap", "scenario")
    spread_raw = swap_block.get("spread", "fair")
    fair = isinstance(spread_raw, str)
    if fair and spread_raw != "fair":
        raise ScenarioError("swap: spread must be a number or the string 'fair'")
    try:
        swap = BasisSwapSpec(
            fine_tenor=str(_require(swap_block, "fine_tenor", "swap")),
            coarse_tenor=str(_require(swap_block, "coarse_tenor", "swap")),
            n_coarse=int(_require(swap_block, "n_coarse", "swap")),
            spread=0.0 if fair else float(spread_raw),
        )
        swap.schedule(tenor)  # validates tenors and maturity against the grid
    except (ValueError, KeyError) as exc:
        raise ScenarioError(f"swap: {exc}") from None

    csa_block = data.get("csas", "default")
    if csa_block == "default":
        csas = default_csa_set()
    else:
        try:
            csas = tuple(CSASpec(**entry) for entry in csa_block)
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"csas: {exc}") from None
    if len({c.name for c in csas}) != len(csas):
        raise ScenarioError("csas: duplicate names")

    sim_block = data.get("simulation", {})
    sim = SimulationSettings(
        n_paths=int(sim_block.get("n_paths", 100_000)),
        n_steps=int(sim_block.get("n_steps", 200)),
        seed=int(sim_block.get("seed", 42)),
        substeps=int(sim_block.get("substeps", 4)),
    )

    forward_curve = None
    if "forward_curve" in data:
        forward_curve = _build_forward_curve(data["forward_curve"], base_dir, hashes)
        try:
            verify_forward_curve_consistency(forward_curve, init)
        except Exception as exc:
            raise ScenarioError(f"forward_curve: {exc}") from None
    if "if1" in aliases and forward_curve is None:
        raise ScenarioError(
            "interpolators: 'if1' (curve-fit) requires a forward_curve block"
        )

    return Scenario(
        name=name,
        model=model,
        tenor=tenor,
        init=init,
        manifold=manifold,
        interpolators=aliases,
        swap=swap,
        fair_spread=fair,
        csas=csas,
        sim=sim,
        forward_curve=forward_curve,
        source_hashes=hashes,
        raw=data,
    )


def load_scenario(path) -> Scenario:
    """Load a scenario JSON file, resolving references next to it."""
    path = Path(path)
    if not path.is_file():
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ScenarioError(f"{path}: top level must be a JSON object")
    return scenario_from_dict(data, path.parent)


# ---------------------------------------------------------------------------
# the shipped synthetic scenario
# ---------------------------------------------------------------------------

_DEFAULT_FORWARD = {
    "points": [
        [0.0, 0.022],
        [2.25, 0.022],
        [4.0, 0.032],
        [5.25, 0.032],
        [7.0, 0.024],
        [10.0, 0.024],
    ],
}
_DEFAULT_SPREADS = {"3M": 0.0015, "6M": 0.0030}


def default_scenario_dict() -> dict:
    """The synthetic two-tenor scenario document (10y, quarterly grid)."""
    return {
        "name": DEFAULT_SCENARIO_NAME,
        "model": {
            "mean_reversion": [0.8, 0.4, 0.2],
            "level": [1.0, 1.0, 1.0],
            "vol_scale": [0.4, 0.3, 0.2],
            "horizon": 10.0,
        },
        "tenor": {"n_periods": 40, "tenors": {"3M": 1, "6M": 2}},
        "initial_curves": {"discount_csv": "discount.csv", "libor_csv": "libor.csv"},
        "forward_curve": {"type": "table", **_DEFAULT_FORWARD},
        "manifold": {
            "knot_indices": [9, 16, 21, 28],
            "component_order": [0, 1, 2],
            "turn_degrees": [35.0, 45.0],
        },
        "interpolators": ["if1", "if2", "if3"],
        "swap": {"fine_tenor": "3M", "coarse_tenor": "6M", "n_coarse": 20, "spread": "fair"},
        "csas": "default",
        "simulation": {"n_paths": 100_000, "n_steps": 200, "seed": 42, "substeps": 4},
    }


def write_default_scenario(directory, *, overrides: dict | None = None) -> Path:
    """Write the synthetic scenario and its curve CSVs into ``directory``.

    The discount factors are generated from the scenario's forward curve
    (so the two are consistent by construction) and the LIBOR fixings add a
    positive, tenor-increasing spread to the implied OIS forwards.  A table
    forward curve given as inline ``points`` is written out as a CSV and the
    document rewritten to reference it.

    Args:
        overrides: optional top-level keys merged over the default document
            (e.g. a smaller ``simulation`` block).

    Returns:
        The path of the written ``scenario.json``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    doc = default_scenario_dict()
    if overrides:
        doc.update(overrides)

    fwd = doc["forward_curve"]
    if fwd.get("type") in ("nelson_siegel", "nelson-siegel"):
        curve = NelsonSiegelCurve(
            beta0=fwd["beta0"], beta1=fwd["beta1"], beta2=fwd["beta2"], decay=fwd["decay"]
        )
    elif fwd.get("type") == "table" and "points" in fwd:
        points = np.asarray(fwd["points"], dtype=float)
        curve = TableForwardCurve(points[:, 0], points[:, 1])
        lines = ["maturity_years,forward_rate"]
        for t, f in points:
            lines.append(f"{t:.17g},{f:.17g}")
        (directory / "forward_table.csv").write_text("\n".join(lines) + "\n")
        doc["forward_curve"] = {"type": "table", "csv": "forward_table.csv"}
    else:
        raise ValueError(
            "the scenario generator needs a nelson_siegel block or table points"
        )
    horizon = float(doc["model"]["horizon"])
    n_periods = int(doc["tenor"]["n_periods"])
    tenor = TenorStructure(
        dates=np.linspace(0.0, horizon, n_periods + 1),
        tenors={str(k): int(v) for k, v in doc["tenor"]["tenors"].items()},
    )
    discounts = np.exp(-curve.integral(0.0, tenor.dates))

    lines = ["maturity_years,discount_factor"]
    for t, b in zip(tenor.dates[1:], discounts[1:]):
        lines.append(f"{t:.17g},{b:.17g}")
    (directory / "discount.csv").write_text("\n".join(lines) + "\n")

    lines = ["tenor,maturity_years,libor_rate"]
    for label in tenor.tenors:
        sub = tenor.sub_indices(label)
        b_x = discounts[sub]
        fwd = (b_x[:-1] / b_x[1:] - 1.0) / tenor.delta_x(label)
        for t, rate in zip(tenor.dates[sub][1:], fwd + _DEFAULT_SPREADS[label]):
            lines.append(f"{label},{t:.17g},{rate:.17g}")
    (directory / "libor.csv").write_text("\n".join(lines) + "\n")

    out = directory / "scenario.json"
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return out
