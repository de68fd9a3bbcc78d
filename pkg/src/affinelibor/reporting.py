"""Report emission: delimited output, schema checks, and figures.

Every numeric table leaves the pipeline as a CSV with one header row and
floats printed with 17 significant digits, which round-trips float64
losslessly.  The run manifest records each emitted file with its column
schema, row count, and content hash, and ``validate_bundle`` re-checks an
output directory against its manifest.  Figures are rendered with the Agg
backend so runs stay headless.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ScenarioError

FLOAT_FORMAT = "%.17g"
MANIFEST_NAME = "manifest.json"


# ---------------------------------------------------------------------------
# delimited output
# ---------------------------------------------------------------------------


def write_csv(path, columns: dict[str, np.ndarray]) -> dict:
    """Write named, equal-length columns as CSV with a header row.

    Returns:
        The manifest entry for the file: column names, row count, and the
        SHA-256 of the written bytes.
    """
    path = Path(path)
    names = list(columns)
    if not names:
        raise ValueError("need at least one column")
    arrays = [np.asarray(columns[n], dtype=float).ravel() for n in names]
    n_rows = arrays[0].size
    if any(a.size != n_rows for a in arrays):
        raise ValueError("columns must have equal length")
    lines = [",".join(names)]
    for row in zip(*arrays):
        lines.append(",".join(FLOAT_FORMAT % v for v in row))
    data = ("\n".join(lines) + "\n").encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return {
        "columns": names,
        "rows": int(n_rows),
        "sha256": hashlib.sha256(data).hexdigest(),
    }


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Read a report CSV back: ``(column_names, (rows, cols) array)``."""
    path = Path(path)
    if not path.is_file():
        raise ScenarioError(f"report file not found: {path}")
    lines = path.read_text().splitlines()
    if not lines:
        raise ScenarioError(f"{path}: empty file")
    names = lines[0].split(",")
    try:
        data = np.array(
            [[float(v) for v in line.split(",")] for line in lines[1:] if line]
        )
    except ValueError as exc:
        raise ScenarioError(f"{path}: non-numeric entry ({exc})") from None
    if data.size and data.shape[1] != len(names):
        raise ScenarioError(f"{path}: row width does not match the header")
    return names, data.reshape(-1, len(names))


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# the manifest and its validator
# ---------------------------------------------------------------------------


def write_manifest(out_dir, manifest: dict) -> Path:
    path = Path(out_dir) / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def validate_bundle(out_dir) -> dict:
    """Re-check a report directory against its manifest.

    Verifies that every recorded file exists, hashes to the recorded
    digest, parses as CSV, and matches its recorded column schema and row
    count.

    Returns:
        The parsed manifest.

    Raises:
        ScenarioError: on any missing, corrupted, or mismatched output.
    """
    out_dir = Path(out_dir)
    manifest_path = out_dir / MANIFEST_NAME
    if not manifest_path.is_file():
        raise ScenarioError(f"no {MANIFEST_NAME} in {out_dir}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{manifest_path}: invalid JSON ({exc})") from None
    for key in ("seed", "versions", "files"):
        if key not in manifest:
            raise ScenarioError(f"{manifest_path}: missing key {key!r}")
    for rel, entry in manifest["files"].items():
        path = out_dir / rel
        if not path.is_file():
            raise ScenarioError(f"manifest lists missing file {rel}")
        if file_sha256(path) != entry["sha256"]:
            raise ScenarioError(f"{rel}: content does not match its recorded hash")
        names, data = read_csv(path)
        if names != entry["columns"]:
            raise ScenarioError(f"{rel}: columns {names} != recorded {entry['columns']}")
        if data.shape[0] != entry["rows"]:
            raise ScenarioError(f"{rel}: {data.shape[0]} rows != recorded {entry['rows']}")
    for rel, entry in manifest.get("documents", {}).items():
        path = out_dir / rel
        if not path.is_file():
            raise ScenarioError(f"manifest lists missing file {rel}")
        if file_sha256(path) != entry["sha256"]:
            raise ScenarioError(f"{rel}: content does not match its recorded hash")
    for rel in manifest.get("figures", []):
        if not (out_dir / rel).is_file():
            raise ScenarioError(f"manifest lists missing figure {rel}")
    return manifest


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def _shade_segments(ax, segments):
    """Shade curved-manifold time segments ``(t_lo, t_hi, curved)``."""
    for t_lo, t_hi, curved in segments:
        if curved:
            ax.axvspan(t_lo, t_hi, color="0.85", zorder=0, linewidth=0)


def figure_interpolation(path, dense_times, dense_u, knot_dates, knots, label) -> Path:
    """Components of the interpolated parameter path with its knots."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(8.0, 4.5))
    d = dense_u.shape[1]
    for j in range(d):
        ax.plot(dense_times, dense_u[:, j], label=f"component {j}")
        ax.plot(knot_dates, knots[:, j], ".", color="black", markersize=4)
    ax.set_xlabel("maturity (years)")
    ax.set_ylabel("interpolated parameter")
    ax.set_title(f"interpolating function ({label})")
    ax.legend(frameon=False, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def figure_tva_profiles(path, times, profiles, label) -> Path:
    """Mean adjustment profiles per convention with percentile bands.

    Args:
        profiles: mapping name -> (mean, p_low, p_high) arrays.
    """
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(8.0, 4.5))
    for name, (mean, p_low, p_high) in profiles.items():
        (line,) = ax.plot(times, mean, label=name)
        ax.fill_between(times, p_low, p_high, alpha=0.15, color=line.get_color())
    ax.set_xlabel("time (years)")
    ax.set_ylabel("valuation adjustment")
    ax.set_title(f"adjustment profiles ({label})")
    ax.legend(frameon=False, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def figure_differences(path, times, price_diffs, tva_diffs, segments) -> Path:
    """Pairwise interpolation differences; curved segments shaded.

    Args:
        price_diffs: mapping pair label -> mean absolute price difference
            series on ``times``.
        tva_diffs: mapping pair label -> mean absolute adjustment
            difference series (may be empty).
    """
    plt = _pyplot()
    n_rows = 2 if tva_diffs else 1
    fig, axes = plt.subplots(n_rows, 1, figsize=(8.0, 3.2 * n_rows), sharex=True)
    axes = np.atleast_1d(axes)
    floor = 1e-18  # keep exact zeros visible on the log axis
    for label, series in price_diffs.items():
        axes[0].plot(times, np.maximum(series, floor), label=label)
    _shade_segments(axes[0], segments)
    axes[0].set_yscale("log")
    axes[0].set_ylabel("mean |price difference|")
    axes[0].legend(frameon=False, fontsize=9)
    axes[0].set_title("interpolation risk (curved-manifold segments shaded)")
    if tva_diffs:
        for label, series in tva_diffs.items():
            axes[1].plot(times, np.maximum(series, floor), label=label)
        _shade_segments(axes[1], segments)
        axes[1].set_yscale("log")
        axes[1].set_ylabel("|adjustment difference|")
        axes[1].legend(frameon=False, fontsize=9)
    axes[-1].set_xlabel("time (years)")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)
