"""End-to-end scenario runs and interpolation-risk comparison.

``run_scenario`` drives fit → interpolate → simulate → price → TVA →
compare and emits the report bundle: per interpolation kind a short-rate
sample CSV, a swap price path CSV, and one adjustment CSV per close-out
convention; across kinds pairwise absolute-difference CSVs, a comparison
summary, figures, and a manifest that pins seed, tolerances, versions, and
content hashes.  Any stage failure removes the files written so far and
surfaces as :class:`StageError` naming the stage.

Interpolation risk is isolated on a common path bundle: prices for *all*
kinds are evaluated along one exact-scheme bundle simulated without any
interpolation-dependent drift, so two kinds that agree as functions give
literally identical prices there.  Each kind's adjustment, by contrast, is
solved on its own spot-measure bundle (the dynamics are interpolation-
dependent), with one shared seed coupling the driving noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .affine import RiccatiFlow, simulate_paths
from .errors import ComparisonError, ScenarioError, StageError
from .multicurve import CalibratedSequences, calibrate, knotted_manifold, staged_manifold
from .reporting import (
    MANIFEST_NAME,
    figure_differences,
    figure_interpolation,
    figure_tva_profiles,
    file_sha256,
    read_csv,
    write_csv,
    write_manifest,
)
from .scenario import Scenario
from .tenor import TermStructure, interpolate_vectors
from .xva import (
    TVAResult,
    basis_swap_price_paths,
    fair_basis_spread,
    generate_spot_paths,
    solve_tva_backward,
)

_N_SAMPLE_PATHS = 8

#: tolerances baked into the fitting and comparison layers, echoed in the
#: run manifest
PIPELINE_TOLERANCES = {
    "refit_relative": 1e-10,
    "bisection": 1e-12,
    "curve_fit_residual": 5e-10,
    "price_flat": 1e-10,
    "tva_active": 1e-8,
}

_STAGES = ("fit", "interpolate", "simulate", "price", "tva", "compare")


def _versions() -> dict:
    import platform

    import matplotlib
    import scipy

    try:
        from importlib.metadata import version

        pkg = version("affinelibor")
    except Exception:
        pkg = "unknown"
    return {
        "affinelibor": pkg,
        "matplotlib": matplotlib.__version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "scipy": scipy.__version__,
    }


# ---------------------------------------------------------------------------
# bundle containers
# ---------------------------------------------------------------------------


@dataclass
class KindReport:
    """Per-interpolation-kind results kept after its bundle is released."""

    alias: str
    kind: str
    ucurve: object
    term: TermStructure
    rate_mean: np.ndarray
    rate_se: np.ndarray
    rate_sample: np.ndarray  # (L, k) first few paths
    price_mean: np.ndarray
    price_se: np.ndarray
    price_sample: np.ndarray
    common_prices: np.ndarray  # (L, n) prices on the shared bundle
    tva: tuple[TVAResult, ...] = ()


@dataclass
class ReportBundle:
    """Everything a finished run hands to comparison and inspection."""

    scenario: Scenario
    flow: RiccatiFlow
    seq: CalibratedSequences
    swap: object  # BasisSwapSpec with the spread resolved
    spread: float
    times: np.ndarray
    reports: dict[str, KindReport]
    segments: tuple[tuple[float, float, bool], ...]
    out_dir: Path | None = None


@dataclass(frozen=True)
class PairComparison:
    """Difference series between two interpolation kinds."""

    a: str
    b: str
    times: np.ndarray
    price_diff: np.ndarray  # mean |P^a - P^b| per time, common bundle
    tva_diff: dict  # csa name -> |mean profile difference|


@dataclass(frozen=True)
class ComparisonSummary:
    """Pairwise difference series plus per-segment reductions and flags."""

    segments: tuple[tuple[float, float, bool], ...]
    pairs: tuple[PairComparison, ...]
    price_flat_tol: float
    tva_active_tol: float
    segment_stats: dict  # (a, b) -> {"price_max": [...], "tva_max": [...] | None}

    def flagged_segments(self, a: str, b: str) -> list[int]:
        """Segments where prices agree but the adjustments do not."""
        stats = self.segment_stats[(a, b)]
        if stats["tva_max"] is None:
            return []
        return [
            i
            for i, (p, v) in enumerate(zip(stats["price_max"], stats["tva_max"]))
            if p < self.price_flat_tol and v > self.tva_active_tol
        ]

    def to_dict(self) -> dict:
        pairs = []
        for pc in self.pairs:
            stats = self.segment_stats[(pc.a, pc.b)]
            curved = [s[2] for s in self.segments]
            price_max = np.asarray(stats["price_max"])
            entry = {
                "a": pc.a,
                "b": pc.b,
                "segment_price_max": [float(v) for v in price_max],
                "segment_tva_max": None
                if stats["tva_max"] is None
                else [float(v) for v in stats["tva_max"]],
                "flagged_segments": self.flagged_segments(pc.a, pc.b),
                "max_price_diff_curved": float(
                    max((p for p, c in zip(price_max, curved) if c), default=0.0)
                ),
                "max_price_diff_straight": float(
                    max((p for p, c in zip(price_max, curved) if not c), default=0.0)
                ),
            }
            pairs.append(entry)
        return {
            "price_flat_tol": self.price_flat_tol,
            "tva_active_tol": self.tva_active_tol,
            "segments": [
                {"t_lo": float(lo), "t_hi": float(hi), "curved": bool(c)}
                for lo, hi, c in self.segments
            ],
            "pairs": pairs,
        }


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def curved_time_segments(seq: CalibratedSequences) -> tuple[tuple[float, float, bool], ...]:
    """Classify each tenor interval as straight or curved on the manifold.

    An interval is curved when the parameter stretch between its fitted
    vectors overlaps an arc segment of the fitting manifold by more than a
    sliver; intervals whose stretch stays on line segments are straight.
    """
    arcs = seq.manifold.arc_spans
    dates = seq.tenor.dates
    flags = []
    for lo, hi in zip(seq.s_u[:-1], seq.s_u[1:]):
        sliver = 1e-6 * (hi - lo)
        flags.append(any(min(hi, b) - max(lo, a) > sliver for a, b in arcs))
    return tuple(
        (float(a), float(b), bool(flag))
        for a, b, flag in zip(dates[:-1], dates[1:], flags)
    )


def _column_stats(values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-time mean, standard error, and a small path sample of (L, n)."""
    mean = values.mean(axis=1)
    se = values.std(axis=1, ddof=1) / math.sqrt(values.shape[1])
    sample = values[:, : min(_N_SAMPLE_PATHS, values.shape[1])]
    return mean, se, sample


def _sample_columns(prefix: str, sample: np.ndarray) -> dict:
    return {f"{prefix}_{j + 1}": sample[:, j] for j in range(sample.shape[1])}


class _Emitter:
    """Tracks written outputs so a failed stage can remove them."""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.files: dict[str, dict] = {}
        self.documents: dict[str, dict] = {}
        self.figures: list[str] = []

    def csv(self, name: str, columns: dict) -> None:
        self.files[name] = write_csv(self.out_dir / name, columns)

    def json(self, name: str, payload: dict) -> None:
        path = self.out_dir / name
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        self.documents[name] = {"sha256": file_sha256(path)}

    def cleanup(self) -> None:
        for name in list(self.files) + list(self.documents) + self.figures:
            try:
                (self.out_dir / name).unlink(missing_ok=True)
            except OSError:
                pass


# ---------------------------------------------------------------------------
# the run
# ---------------------------------------------------------------------------


def run_scenario(
    scenario: Scenario, out_dir, *, last_stage: str = "compare"
) -> ReportBundle:
    """Execute the pipeline and emit the report bundle into ``out_dir``.

    Args:
        last_stage: stop after this stage (one of ``fit``, ``interpolate``,
            ``simulate``, ``price``, ``tva``, ``compare``); earlier stages'
            outputs are still written.

    Returns:
        The in-memory bundle (per-path arrays are released; per-kind
        summaries, common-bundle prices, and adjustments are kept).

    Raises:
        StageError: a stage failed; its partial outputs were removed.
    """
    if last_stage not in _STAGES:
        raise ValueError(f"unknown stage {last_stage!r}")
    want = _STAGES[: _STAGES.index(last_stage) + 1]
    emit = _Emitter(Path(out_dir))
    try:
        bundle = _run_stages(scenario, emit, want)
    except Exception as exc:
        emit.cleanup()
        if isinstance(exc, StageError):
            raise
        raise StageError("setup", exc) from exc
    _write_run_manifest(emit, scenario, bundle)
    bundle.out_dir = emit.out_dir
    return bundle


def _run_stages(scenario: Scenario, emit: _Emitter, want) -> ReportBundle:
    sim = scenario.sim
    tenor = scenario.tenor
    d = scenario.model.dimension

    # -- fit ----------------------------------------------------------------
    with _stage("fit", emit):
        flow = RiccatiFlow(scenario.model)
        targets = np.log(scenario.init.ois_discount / scenario.init.ois_discount[-1])
        shape = scenario.manifold
        if shape.style == "staged":
            manifold = staged_manifold(
                flow,
                targets,
                shape.knot_indices,
                shape.component_order,
                turn_degrees=shape.turn_degrees,
            )
        else:
            manifold = knotted_manifold(
                flow,
                targets,
                shape.knot_indices,
                shape.axis_order,
                rounding=shape.rounding,
            )
        seq = calibrate(flow, scenario.init, manifold)
        emit.csv(
            "fitted_u.csv",
            {
                "date": tenor.dates,
                "s": seq.s_u,
                **{f"u_{j}": seq.u[:, j] for j in range(d)},
            },
        )
        for label in tenor.tenors:
            emit.csv(
                f"fitted_v_{label}.csv",
                {
                    "date": tenor.sub_dates(label),
                    "s": seq.s_v[label],
                    **{f"v_{j}": seq.v[label][:, j] for j in range(d)},
                },
            )
    segments = curved_time_segments(seq)
    bundle = ReportBundle(
        scenario=scenario,
        flow=flow,
        seq=seq,
        swap=scenario.swap,
        spread=scenario.swap.spread,
        times=np.empty(0),
        reports={},
        segments=segments,
    )
    if "interpolate" not in want:
        return bundle

    # -- interpolate ----------------------------------------------------------
    with _stage("interpolate", emit):
        terms: dict[str, TermStructure] = {}
        for alias, canonical in scenario.kinds:
            ucurve = interpolate_vectors(
                seq,
                canonical,
                flow=flow,
                forward_curve=scenario.forward_curve,
            )
            terms[alias] = TermStructure(flow, ucurve)
            dense = np.linspace(0.0, scenario.model.horizon, 8 * tenor.n_periods + 1)
            u_dense = ucurve.value(dense)
            du_dense = ucurve.derivative(dense)
            emit.csv(
                f"ucurve_{alias}.csv",
                {
                    "time": dense,
                    **{f"u_{j}": u_dense[:, j] for j in range(d)},
                    **{f"du_{j}": du_dense[:, j] for j in range(d)},
                },
            )
        swap = scenario.swap
        if scenario.fair_spread:
            swap = replace(swap, spread=fair_basis_spread(flow, seq, swap))
        bundle.swap = swap
        bundle.spread = swap.spread
    if "simulate" not in want:
        return bundle

    # -- simulate / price / tva, one kind at a time --------------------------
    maturity = swap.schedule(tenor)[2]
    times = np.linspace(0.0, maturity, sim.n_steps + 1)
    bundle.times = times
    with _stage("simulate", emit):
        common = simulate_paths(scenario.model, times, sim.n_paths, sim.seed)

    for alias, canonical in scenario.kinds:
        term = terms[alias]
        with _stage("simulate", emit):
            paths = generate_spot_paths(
                term, times, sim.n_paths, sim.seed, substeps=sim.substeps
            )
            rate_mean, rate_se, rate_sample = _column_stats(paths.short_rate)
            emit.csv(
                f"short_rate_{alias}.csv",
                {
                    "time": times,
                    "mean": rate_mean,
                    "se": rate_se,
                    **_sample_columns("r", rate_sample),
                },
            )
        report = KindReport(
            alias=alias,
            kind=canonical,
            ucurve=term.ucurve,
            term=term,
            rate_mean=rate_mean,
            rate_se=rate_se,
            rate_sample=rate_sample,
            price_mean=np.empty(0),
            price_se=np.empty(0),
            price_sample=np.empty((0, 0)),
            common_prices=np.empty((0, 0)),
        )
        bundle.reports[alias] = report
        if "price" not in want:
            del paths
            continue

        with _stage("price", emit):
            prices = basis_swap_price_paths(term, bundle.seq, swap, times, paths.states)
            report.price_mean, report.price_se, report.price_sample = _column_stats(
                prices
            )
            report.common_prices = basis_swap_price_paths(
                term, bundle.seq, swap, times, common.states
            )
            emit.csv(
                f"price_paths_{alias}.csv",
                {
                    "time": times,
                    "mean": report.price_mean,
                    "se": report.price_se,
                    **_sample_columns("p", report.price_sample),
                },
            )
        if "tva" in want and scenario.csas:
            with _stage("tva", emit):
                report.tva = tuple(
                    solve_tva_backward(
                        term, bundle.seq, swap, scenario.csas, paths, prices=prices
                    )
                )
                for res in report.tva:
                    emit.csv(
                        f"tva_{alias}_{res.name}.csv",
                        {
                            "time": times,
                            "mean": res.mean,
                            "p2.5": res.p_low,
                            "p97.5": res.p_high,
                            "se": res.se,
                        },
                    )
        del prices
        del paths  # release the bundle before the next kind

    # -- compare --------------------------------------------------------------
    if "compare" in want:
        with _stage("compare", emit):
            summary = None
            if len(bundle.reports) >= 2 and "price" in want:
                summary = compare_interpolators(bundle)
                _emit_comparison(emit, bundle, summary)
            _emit_figures(emit, bundle, summary)
    return bundle


class _stage:
    def __init__(self, name: str, emit: _Emitter):
        self.name = name
        self.emit = emit

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError):
            self.emit.cleanup()
            raise StageError(self.name, exc) from exc
        return False


def _write_run_manifest(emit: _Emitter, scenario: Scenario, bundle: ReportBundle):
    manifest = {
        "scenario": scenario.raw,
        "scenario_name": scenario.name,
        "input_hashes": scenario.source_hashes,
        "seed": scenario.sim.seed,
        "n_paths": scenario.sim.n_paths,
        "n_steps": scenario.sim.n_steps,
        "substeps": scenario.sim.substeps,
        "interpolators": list(scenario.interpolators),
        "swap_spread": bundle.spread,
        "tolerances": PIPELINE_TOLERANCES,
        "versions": _versions(),
        "files": emit.files,
        "documents": emit.documents,
        "figures": emit.figures,
    }
    write_manifest(emit.out_dir, manifest)


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------


def compare_interpolators(
    bundle: ReportBundle,
    *,
    price_flat_tol: float = PIPELINE_TOLERANCES["price_flat"],
    tva_active_tol: float = PIPELINE_TOLERANCES["tva_active"],
) -> ComparisonSummary:
    """Pairwise interpolation differences over a finished bundle.

    Price differences are mean absolute differences on the common path
    bundle (identical functions give exact zeros); adjustment differences
    compare the per-convention mean profiles.  Per tenor segment the
    summary records the maxima and flags segments where prices agree to
    ``price_flat_tol`` while some adjustment differs by more than
    ``tva_active_tol``.

    Raises:
        ComparisonError: fewer than two kinds, or mismatched time grids.
    """
    reports = list(bundle.reports.values())
    if len(reports) < 2:
        raise ComparisonError("need at least two interpolator kinds to compare")
    times = bundle.times
    for rep in reports:
        if rep.common_prices.shape[0] != times.shape[0]:
            raise ComparisonError(
                f"kind {rep.alias!r} was priced on a different time grid"
            )

    pairs = []
    stats: dict = {}
    for i in range(len(reports)):
        for j in range(i + 1, len(reports)):
            a, b = reports[i], reports[j]
            price_diff = np.abs(a.common_prices - b.common_prices).mean(axis=1)
            tva_diff = {}
            if a.tva and b.tva:
                by_name = {r.name: r for r in b.tva}
                for res in a.tva:
                    other = by_name.get(res.name)
                    if other is None:
                        continue
                    if other.times.shape != res.times.shape or np.any(
                        other.times != res.times
                    ):
                        raise ComparisonError(
                            f"adjustment grids differ between {a.alias} and {b.alias}"
                        )
                    tva_diff[res.name] = np.abs(res.mean - other.mean)
            pair = PairComparison(
                a=a.alias, b=b.alias, times=times, price_diff=price_diff, tva_diff=tva_diff
            )
            pairs.append(pair)
            stats[(a.alias, b.alias)] = _segment_stats(bundle.segments, pair)
    return ComparisonSummary(
        segments=bundle.segments,
        pairs=tuple(pairs),
        price_flat_tol=price_flat_tol,
        tva_active_tol=tva_active_tol,
        segment_stats=stats,
    )


def _segment_stats(segments, pair: PairComparison) -> dict:
    price_max = []
    tva_max = [] if pair.tva_diff else None
    for t_lo, t_hi, _ in segments:
        mask = (pair.times >= t_lo - 1e-12) & (pair.times <= t_hi + 1e-12)
        if not np.any(mask):
            price_max.append(0.0)
            if tva_max is not None:
                tva_max.append(0.0)
            continue
        price_max.append(float(pair.price_diff[mask].max()))
        if tva_max is not None:
            tva_max.append(
                float(max(series[mask].max() for series in pair.tva_diff.values()))
            )
    return {"price_max": price_max, "tva_max": tva_max}


def _emit_comparison(emit: _Emitter, bundle: ReportBundle, summary: ComparisonSummary):
    for pair in summary.pairs:
        emit.csv(
            f"diff_price_{pair.a}_vs_{pair.b}.csv",
            {"time": pair.times, "mean_abs_diff": pair.price_diff},
        )
        if pair.tva_diff:
            emit.csv(
                f"diff_tva_{pair.a}_vs_{pair.b}.csv",
                {"time": pair.times, **pair.tva_diff},
            )
    emit.json("comparison_summary.json", summary.to_dict())


def _emit_figures(
    emit: _Emitter, bundle: ReportBundle, summary: ComparisonSummary | None
):
    tenor = bundle.scenario.tenor
    dense = np.linspace(0.0, bundle.scenario.model.horizon, 8 * tenor.n_periods + 1)
    for alias, rep in bundle.reports.items():
        name = f"fig_interpolation_{alias}.png"
        figure_interpolation(
            emit.out_dir / name,
            dense,
            rep.ucurve.value(dense),
            tenor.dates,
            bundle.seq.u,
            alias,
        )
        emit.figures.append(name)
        if rep.tva:
            name = f"fig_tva_{alias}.png"
            figure_tva_profiles(
                emit.out_dir / name,
                bundle.times,
                {r.name: (r.mean, r.p_low, r.p_high) for r in rep.tva},
                alias,
            )
            emit.figures.append(name)
    if summary is not None:
        price_diffs = {f"{p.a} vs {p.b}": p.price_diff for p in summary.pairs}
        tva_diffs = {
            f"{p.a} vs {p.b}": np.max(np.vstack(list(p.tva_diff.values())), axis=0)
            for p in summary.pairs
            if p.tva_diff
        }
        name = "fig_differences.png"
        figure_differences(
            emit.out_dir / name, bundle.times, price_diffs, tva_diffs, bundle.segments
        )
        emit.figures.append(name)


# ---------------------------------------------------------------------------
# comparison against an existing report directory
# ---------------------------------------------------------------------------


def compare_from_directory(
    scenario: Scenario,
    out_dir,
    *,
    price_flat_tol: float = PIPELINE_TOLERANCES["price_flat"],
    tva_active_tol: float = PIPELINE_TOLERANCES["tva_active"],
) -> ComparisonSummary:
    """Compare interpolators, reusing a directory's adjustment profiles.

    Re-runs the cheap stages (fit, interpolate, one common bundle, pricing)
    and reads the per-kind adjustment CSVs written by an earlier ``run`` or
    ``tva`` invocation, then writes the comparison outputs into the same
    directory.

    Raises:
        ComparisonError: fewer than two kinds, or the stored adjustment
            grids do not match the scenario's simulation grid.
    """
    if len(scenario.interpolators) < 2:
        raise ComparisonError("need at least two interpolator kinds to compare")
    out_dir = Path(out_dir)
    manifest_path = out_dir / MANIFEST_NAME
    old_files: dict = {}
    old_documents: dict = {}
    old_figures: list = []
    if manifest_path.is_file():
        old = json.loads(manifest_path.read_text())
        old_files = old.get("files", {})
        old_documents = old.get("documents", {})
        old_figures = old.get("figures", [])

    # Read the stored profiles before re-running anything, so a stale or
    # incomplete directory fails fast without touching its contents.
    stored: dict[str, list[tuple[str, np.ndarray]]] = {}
    for alias in scenario.interpolators:
        stored[alias] = []
        for csa in scenario.csas:
            path = out_dir / f"tva_{alias}_{csa.name}.csv"
            if not path.is_file():
                raise ComparisonError(
                    f"missing {path.name}; run the 'tva' or 'run' stage first"
                )
            try:
                names, data = read_csv(path)
            except ScenarioError as exc:
                raise ComparisonError(str(exc)) from None
            if names[:2] != ["time", "mean"] or data.shape[1] != 5:
                raise ComparisonError(f"{path.name}: stored grid does not match")
            stored[alias].append((csa.name, data))

    bundle = run_scenario(scenario, out_dir, last_stage="price")
    times = bundle.times
    for alias, entries in stored.items():
        results = []
        for name, data in entries:
            if data.shape[0] != times.shape[0] or np.max(np.abs(data[:, 0] - times)) > 1e-12:
                raise ComparisonError(
                    f"tva_{alias}_{name}.csv: stored grid does not match"
                )
            results.append(
                TVAResult(
                    name=name,
                    times=data[:, 0],
                    mean=data[:, 1],
                    p_low=data[:, 2],
                    p_high=data[:, 3],
                    se=data[:, 4],
                )
            )
        bundle.reports[alias].tva = tuple(results)

    emit = _Emitter(out_dir)
    with _stage("compare", emit):
        summary = compare_interpolators(
            bundle, price_flat_tol=price_flat_tol, tva_active_tol=tva_active_tol
        )
        _emit_comparison(emit, bundle, summary)
        _emit_figures(emit, bundle, summary)

    # fold the reused and freshly written outputs into one manifest: the
    # recomputed stages re-recorded themselves, the adjustment files keep
    # their original entries, and the comparison outputs replace any older
    # versions of themselves
    manifest = json.loads(manifest_path.read_text())
    files = dict(old_files)
    files.update(manifest.get("files", {}))
    files.update(emit.files)
    documents = dict(old_documents)
    documents.update(manifest.get("documents", {}))
    documents.update(emit.documents)
    manifest["files"] = files
    manifest["documents"] = documents
    manifest["figures"] = sorted(
        set(old_figures) | set(manifest.get("figures", [])) | set(emit.figures)
    )
    write_manifest(out_dir, manifest)
    return summary
