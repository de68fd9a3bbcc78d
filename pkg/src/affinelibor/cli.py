"""Command-line entry points for scenario runs and comparisons.

Every subcommand takes a scenario JSON (``--scenario``); without one the
shipped synthetic scenario is written into ``<out>/scenario/`` and used,
so ``affinelibor run`` works out of the box.  ``--seed``, ``--paths``,
``--steps``, and ``--interp`` override the scenario's simulation block and
interpolator list without editing the file.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .errors import AffineLiborError, ScenarioError, StageError
from .pipeline import compare_from_directory, run_scenario
from .reporting import MANIFEST_NAME
from .scenario import (
    KIND_ALIASES,
    Scenario,
    load_scenario,
    normalize_kind,
    write_default_scenario,
)

#: subcommand -> last pipeline stage executed
_STAGE_OF = {
    "fit": "fit",
    "interpolate": "interpolate",
    "simulate": "simulate",
    "price": "price",
    "tva": "tva",
    "run": "compare",
}

_SUBCOMMAND_HELP = {
    "fit": "calibrate the exponent vectors to the initial curves",
    "interpolate": "extend the fitted vectors to continuous maturity",
    "simulate": "draw driver paths and record the short rate",
    "price": "evaluate the basis swap along the simulated paths",
    "tva": "solve the valuation adjustments for every convention",
    "compare": "re-derive prices and compare stored adjustment profiles",
    "run": "execute every stage and write the full report bundle",
}


def _add_common_arguments(sub: argparse.ArgumentParser) -> None:
    sub.add_argument(
        "--scenario",
        metavar="PATH",
        help="scenario JSON file (default: write and use the shipped "
        "synthetic scenario under <out>/scenario/)",
    )
    sub.add_argument(
        "--out",
        metavar="DIR",
        default="affinelibor-report",
        help="output directory for the report bundle (default: %(default)s)",
    )
    sub.add_argument("--seed", type=int, help="override the simulation seed")
    sub.add_argument(
        "--paths", type=int, metavar="N", help="override the number of paths"
    )
    sub.add_argument(
        "--steps", type=int, metavar="N", help="override the number of time steps"
    )
    sub.add_argument(
        "--interp",
        action="append",
        choices=sorted(KIND_ALIASES),
        metavar="{if1,if2,if3,if4}",
        help="interpolator kind to run (repeatable; default: the scenario's list)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="affinelibor",
        description="Multi-curve term-structure runs: fitting, maturity "
        "interpolation, simulation, swap pricing, valuation adjustments, "
        "and interpolation-risk comparison.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, text in _SUBCOMMAND_HELP.items():
        sub = subparsers.add_parser(name, help=text, description=text)
        _add_common_arguments(sub)
    return parser


def _resolve_scenario(args: argparse.Namespace) -> Scenario:
    """Load the scenario and apply the command-line overrides."""
    if args.scenario is None:
        path = write_default_scenario(Path(args.out) / "scenario")
        print(f"using shipped synthetic scenario: {path}")
    else:
        path = Path(args.scenario)
    scenario = load_scenario(path)

    sim_overrides = {}
    if args.seed is not None:
        sim_overrides["seed"] = args.seed
    if args.paths is not None:
        sim_overrides["n_paths"] = args.paths
    if args.steps is not None:
        sim_overrides["n_steps"] = args.steps
    if sim_overrides:
        scenario = replace(scenario, sim=replace(scenario.sim, **sim_overrides))

    if args.interp:
        aliases = tuple(dict.fromkeys(normalize_kind(k)[0] for k in args.interp))
        if "if1" in aliases and scenario.forward_curve is None:
            raise ScenarioError(
                "interpolator 'if1' (curve-fit) needs a forward_curve block "
                "in the scenario"
            )
        scenario = replace(scenario, interpolators=aliases)
    return scenario


def _read_manifest(out_dir: Path) -> dict:
    path = out_dir / MANIFEST_NAME
    if not path.is_file():
        raise ScenarioError(f"no run manifest in {out_dir}; run the pipeline first")
    return json.loads(path.read_text())


def _scenario_for_compare(args: argparse.Namespace, manifest: dict) -> Scenario:
    """Resolve the scenario a stored report was built from.

    The manifest's recorded settings are the baseline so the re-derived
    stages line up with the stored profiles; explicit command-line flags
    still win.
    """
    if args.scenario is None:
        stored = Path(args.out) / "scenario" / "scenario.json"
        if not stored.is_file():
            raise ScenarioError(
                "compare: no stored scenario under the report directory; "
                "pass --scenario with the file the report was built from"
            )
        args.scenario = str(stored)
    scenario = _resolve_scenario(args)

    sim_overrides = {"substeps": int(manifest["substeps"])}
    if args.seed is None:
        sim_overrides["seed"] = int(manifest["seed"])
    if args.paths is None:
        sim_overrides["n_paths"] = int(manifest["n_paths"])
    if args.steps is None:
        sim_overrides["n_steps"] = int(manifest["n_steps"])
    scenario = replace(scenario, sim=replace(scenario.sim, **sim_overrides))
    if not args.interp:
        aliases = tuple(manifest.get("interpolators", scenario.interpolators))
        scenario = replace(scenario, interpolators=aliases)

    recorded = manifest.get("input_hashes", {})
    if recorded and recorded != scenario.source_hashes:
        raise ScenarioError(
            "compare: scenario input files differ from the ones the report "
            "was built from"
        )
    return scenario


def _print_run(bundle, scenario: Scenario, stage: str) -> None:
    print(f"scenario: {scenario.name}")
    print(
        f"interpolators: {', '.join(scenario.interpolators)}; "
        f"seed {scenario.sim.seed}, {scenario.sim.n_paths} paths, "
        f"{scenario.sim.n_steps} steps"
    )
    if stage not in ("fit",):
        note = " (fair, resolved at inception)" if scenario.fair_spread else ""
        print(f"swap spread: {bundle.spread:.6e}{note}")
    print(f"report bundle written to {bundle.out_dir}")


def _print_comparison(summary) -> None:
    n_curved = sum(1 for s in summary.segments if s[2])
    print(
        f"{len(summary.segments)} tenor segments "
        f"({n_curved} on curved parts of the fitting manifold)"
    )
    for pair in summary.pairs:
        stats = summary.segment_stats[(pair.a, pair.b)]
        price_max = max(stats["price_max"], default=0.0)
        line = f"{pair.a} vs {pair.b}: max mean |price diff| {price_max:.3e}"
        flagged = summary.flagged_segments(pair.a, pair.b)
        if flagged:
            spans = ", ".join(
                f"[{summary.segments[i][0]:g}, {summary.segments[i][1]:g}]"
                for i in flagged
            )
            line += (
                f"; prices agree but adjustments differ on {len(flagged)} "
                f"segment(s): {spans}"
            )
        print(line)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "compare":
            manifest = _read_manifest(Path(args.out))
            scenario = _scenario_for_compare(args, manifest)
            summary = compare_from_directory(scenario, args.out)
            _print_comparison(summary)
        else:
            scenario = _resolve_scenario(args)
            stage = _STAGE_OF[args.command]
            bundle = run_scenario(scenario, args.out, last_stage=stage)
            _print_run(bundle, scenario, stage)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except AffineLiborError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
