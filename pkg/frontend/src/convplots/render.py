"""Render convergence CSVs into log-log figures with reference slopes.

Input files follow the experiment CSV schemas of the simulation package
(variance-decay, spatial-error, euler-gap, mlmc-run); the file kind is
detected from the header row.  Panels are grouped by dimension/smoothness,
series carry error bars from their standard-error columns, and dashed
reference lines of the theoretical slopes are anchored at the last data
point of each series.  Rendering is a pure function of the CSV contents and
the options; re-running overwrites the output identically structured.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["FigureSpec", "RenderSummary", "render", "main"]

_KNOWN_HEADERS = {
    "variance-decay": [
        "d",
        "s",
        "M",
        "N",
        "K",
        "K_effective",
        "var_antithetic",
        "se_antithetic",
        "var_standard",
        "se_standard",
        "n_samples",
    ],
    "spatial-error": ["d", "s", "N", "N_fine", "M", "K", "l2_diff", "se", "n_samples"],
    "mlmc-run": ["level", "M", "N", "K", "n_samples", "mean_diff", "var_diff", "cost"],
    "euler-gap": ["d", "s", "M", "l2_gap", "se", "n_samples"],
}

#: reference lines need this many points to be meaningful
MIN_POINTS_FOR_SLOPE = 3


class RenderError(ValueError):
    """Input CSV is empty, malformed, or missing required columns."""


@dataclass(frozen=True)
class FigureSpec:
    """What to draw: inputs, output, and optional slope overrides."""

    csv_paths: tuple[str, ...]
    out_path: str
    image_format: str = "svg"
    reference_slopes: tuple[float, ...] | None = None
    title: str | None = None

    def __post_init__(self):
        if self.image_format not in ("svg", "png"):
            raise ValueError(f"format must be 'svg' or 'png', got {self.image_format!r}")
        if not self.csv_paths:
            raise ValueError("at least one input CSV is required")
        if self.reference_slopes is not None:
            for slope in self.reference_slopes:
                if not math.isfinite(slope):
                    raise ValueError(f"reference slope {slope!r} is not finite")


@dataclass
class RenderSummary:
    """Counts reported after a successful render."""

    out_path: str
    panels: int = 0
    series: int = 0
    reference_lines: int = 0
    extra_files: list[str] = field(default_factory=list)

    def __str__(self) -> str:
        return (
            f"wrote {self.out_path}: panels={self.panels} series={self.series} "
            f"reference_lines={self.reference_lines} axes=loglog"
        )


def _read_rows(path: str):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise RenderError(f"{path}: empty file")
        header = list(reader.fieldnames)
        kind = None
        for name, columns in _KNOWN_HEADERS.items():
            if header == columns:
                kind = name
                break
        if kind is None:
            raise RenderError(f"{path}: unrecognized columns {header}")
        rows = [{k: float(v) for k, v in row.items()} for row in reader]
    if not rows:
        raise RenderError(f"{path}: no data rows")
    return kind, rows


def _ref_line(ax, xs, anchor_y, slope, label):
    """Dashed guide line through the last data point with the given slope."""
    grid = np.array([min(xs), max(xs)], dtype=float)
    ys = anchor_y * (grid / xs[-1]) ** slope
    ax.plot(grid, ys, "k--", linewidth=0.9, label=label)


def _plot_series(ax, xs, ys, errs, label, marker):
    yerr = None
    if errs is not None:
        yerr = np.minimum(np.asarray(errs), np.asarray(ys) * 0.999)
    ax.errorbar(xs, ys, yerr=yerr, marker=marker, markersize=4, capsize=2, label=label)


def _render_variance_decay(rows, spec, fig, summary):
    groups = sorted({(r["d"], r["s"]) for r in rows})
    axes = fig.subplots(1, len(groups), squeeze=False)[0]
    for ax, (d, s) in zip(axes, groups):
        sub = sorted((r for r in rows if (r["d"], r["s"]) == (d, s)), key=lambda r: r["M"])
        xs = [r["M"] for r in sub]
        alpha = min(1.0 + s, 2.0)
        for column, se_col, label, marker, slope in (
            ("var_standard", "se_standard", "standard", "*", -1.0),
            ("var_antithetic", "se_antithetic", "antithetic", "o", -alpha),
        ):
            ys = [r[column] for r in sub]
            _plot_series(ax, xs, ys, [r[se_col] for r in sub], label, marker)
            summary.series += 1
            if spec.reference_slopes is not None:
                continue
            if len(xs) >= MIN_POINTS_FOR_SLOPE:
                _ref_line(ax, xs, ys[-1], slope, f"$\\propto M^{{{slope:g}}}$")
                summary.reference_lines += 1
        if spec.reference_slopes is not None and len(xs) >= MIN_POINTS_FOR_SLOPE:
            anchor = [r["var_antithetic"] for r in sub][-1]
            for slope in spec.reference_slopes:
                _ref_line(ax, xs, anchor, slope, f"$\\propto M^{{{slope:g}}}$")
                summary.reference_lines += 1
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("M")
        ax.set_ylabel("coupling variance")
        ax.set_title(f"d={d:g}, s={s:g}")
        ax.legend(fontsize=8)
        summary.panels += 1


def _render_spatial_error(rows, spec, fig, summary):
    dims = sorted({r["d"] for r in rows})
    axes = fig.subplots(1, len(dims), squeeze=False)[0]
    for ax, d in zip(axes, dims):
        panel = [r for r in rows if r["d"] == d]
        for s in sorted({r["s"] for r in panel}):
            sub = sorted((r for r in panel if r["s"] == s), key=lambda r: r["N"])
            xs = [r["N"] for r in sub]
            ys = [r["l2_diff"] for r in sub]
            _plot_series(ax, xs, ys, [r["se"] for r in sub], f"s={s:g}", "o")
            summary.series += 1
            slope = -min(1.0 + s, 2.0) / d
            if len(xs) >= MIN_POINTS_FOR_SLOPE:
                _ref_line(ax, xs, ys[-1], slope, f"$\\propto N^{{{slope:g}}}$")
                summary.reference_lines += 1
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("N")
        ax.set_ylabel("resolution distance")
        ax.set_title(f"d={d:g}")
        ax.legend(fontsize=8)
        summary.panels += 1


def _render_euler_gap(rows, spec, fig, summary):
    ax = fig.subplots()
    sub = sorted(rows, key=lambda r: r["M"])
    xs = [r["M"] for r in sub]
    ys = [r["l2_gap"] for r in sub]
    _plot_series(ax, xs, ys, [r["se"] for r in sub], "scheme gap", "o")
    summary.series += 1
    if len(xs) >= MIN_POINTS_FOR_SLOPE:
        _ref_line(ax, xs, ys[-1], -0.5, "$\\propto M^{-1/2}$")
        summary.reference_lines += 1
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("M")
    ax.set_ylabel("corrected vs plain scheme distance")
    ax.legend(fontsize=8)
    summary.panels += 1


def _render_mlmc_run(rows, spec, fig, summary):
    ax = fig.subplots()
    sub = sorted(rows, key=lambda r: r["M"])
    xs = [r["M"] for r in sub]
    for column, label, marker in (
        ("var_diff", "level variance", "o"),
        ("mean_diff", "|level mean|", "s"),
    ):
        ys = [abs(r[column]) for r in sub]
        if any(y <= 0 for y in ys):
            continue
        _plot_series(ax, xs, ys, None, label, marker)
        summary.series += 1
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("M")
    ax.set_ylabel("telescoped term statistics")
    ax.legend(fontsize=8)
    summary.panels += 1


_RENDERERS = {
    "variance-decay": _render_variance_decay,
    "spatial-error": _render_spatial_error,
    "euler-gap": _render_euler_gap,
    "mlmc-run": _render_mlmc_run,
}


def render(spec: FigureSpec) -> RenderSummary:
    """Draw every input CSV and write the figure(s).

    One input writes exactly `spec.out_path`; multiple inputs write one file
    per input with the index appended before the extension.  No file is
    produced when an input is empty or malformed.
    """
    loaded = [_read_rows(path) for path in spec.csv_paths]

    summary = RenderSummary(out_path=spec.out_path)
    out = Path(spec.out_path)
    for index, (kind, rows) in enumerate(loaded):
        if len(loaded) == 1:
            target = out
        else:
            target = out.with_name(f"{out.stem}-{index}{out.suffix}")
            summary.extra_files.append(str(target))
        fig = plt.figure(figsize=(4.2 * max(1, len({(r.get('d'), r.get('s')) for r in rows})), 3.4))
        try:
            _RENDERERS[kind](rows, spec, fig, summary)
            if spec.title:
                fig.suptitle(spec.title)
            fig.tight_layout()
            fig.savefig(target, format=spec.image_format)
        finally:
            plt.close(fig)
    return summary


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="convplots", description=__doc__.splitlines()[0]
    )
    parser.add_argument("csv", nargs="+", help="input CSV path(s)")
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--format", choices=["svg", "png"], default="svg")
    parser.add_argument(
        "--slope",
        type=float,
        action="append",
        help="override reference slope(s); may repeat",
    )
    parser.add_argument("--title", help="figure title")
    args = parser.parse_args(argv)
    try:
        spec = FigureSpec(
            csv_paths=tuple(args.csv),
            out_path=args.out,
            image_format=args.format,
            reference_slopes=tuple(args.slope) if args.slope else None,
            title=args.title,
        )
        summary = render(spec)
    except (RenderError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
