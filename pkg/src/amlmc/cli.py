"""Command-line driver: configure experiments, emit CSVs, fit slopes.

Four subcommands map onto the experiment sweeps and the estimator:

    variance-decay   coupling variance vs. step count (antithetic + standard)
    spatial-error    Galerkin resolution study at a fixed fine time grid
    euler-gap        distance between corrected and plain Euler schemes
    mlmc-run         one adaptive multilevel estimate with per-level stats

All randomness flows from one master seed; for a fixed configuration and
seed the CSV bytes do not depend on the worker count.  Flags may also be
supplied via a JSON config file (flags win).  Exit codes: 0 success,
1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from typing import Sequence

import numpy as np
from scipy import stats as sps

from .mlmc import (
    RateParams,
    euler_gap_sweep,
    mlmc_estimate,
    spatial_error_sweep,
    variance_decay_sweep,
)
from .models import Problem
from .spectral import RationalKind
from .stepping import SimulationError

__all__ = ["main", "run", "fit_slope"]

_SCHEMAS = {
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

_KINDS = {k.value: k for k in RationalKind}


def fit_slope(rows: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Least-squares slope of log y against log x, with its standard error."""
    if len(rows) < 3:
        raise ValueError(f"slope fit needs at least 3 points, got {len(rows)}")
    xs = np.array([r[0] for r in rows], dtype=float)
    ys = np.array([r[1] for r in rows], dtype=float)
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("slope fit needs strictly positive coordinates")
    res = sps.linregress(np.log(xs), np.log(ys))
    stderr = 0.0 if math.isnan(res.stderr) else float(res.stderr)
    return float(res.slope), stderr


def _format_cell(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"refusing to write non-finite CSV cell {value!r}")
    return repr(value)


def write_csv(path: str, command: str, rows: Sequence[dict]) -> None:
    columns = _SCHEMAS[command]
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_format_cell(row[c]) for c in columns))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def _int_list(text: str) -> list[int]:
    try:
        values = [int(tok) for tok in str(text).split(",") if tok.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return values


def _default_workers() -> int:
    cap = os.environ.get("AMLMC_MAX_WORKERS")
    workers = os.cpu_count() or 1
    if cap:
        workers = min(workers, max(1, int(cap)))
    return workers


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amlmc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with the same keys as the flags")
        p.add_argument("--d", type=int, help="spatial dimension (1, 2 or 3)")
        p.add_argument("--s", type=float, help="covariance smoothness parameter")
        p.add_argument("--eps-model", dest="eps_model", type=float, help="data coefficient decay")
        p.add_argument("--T", dest="t_final", type=float, help="final time (default 1)")
        p.add_argument("--kind", choices=sorted(_KINDS), help="rational propagator")
        p.add_argument("--scheme", choices=["milstein", "euler"], help="time stepper")
        p.add_argument("--x0", choices=["reference", "zero"], help="initial state")
        p.add_argument(
            "--spectrum", choices=["dirichlet", "weyl"], help="eigenvalue normalization"
        )
        p.add_argument("--samples", type=int, help="Monte Carlo samples")
        p.add_argument("--seed", type=int, help="master seed (default 0)")
        p.add_argument("--workers", type=int, help="parallel workers")
        p.add_argument("--out", help="output CSV path")

    p = sub.add_parser("variance-decay", help="coupling variance vs. step count")
    common(p)
    p.add_argument("--M", dest="m_list", type=_int_list, help="comma list of coarse step counts")
    p.add_argument(
        "--coupling",
        choices=["both", "antithetic", "standard"],
        help="which variance curve to summarize (CSV always carries both)",
    )

    p = sub.add_parser("spatial-error", help="Galerkin resolution study")
    common(p)
    p.add_argument("--N", dest="n_list", type=_int_list, help="comma list of mode counts")
    p.add_argument("--M", dest="m_fixed", type=int, help="fixed step count (default 512)")
    p.add_argument("--K", dest="k_fixed", type=int, help="fixed noise truncation")

    p = sub.add_parser("euler-gap", help="corrected vs. plain Euler distance")
    common(p)
    p.add_argument("--M", dest="m_list", type=_int_list, help="comma list of step counts")

    p = sub.add_parser("mlmc-run", help="adaptive multilevel estimate")
    common(p)
    p.add_argument("--eps", type=float, help="target root-mean-square accuracy")
    p.add_argument("--M0", dest="m0", type=int, help="base level step count (default 2)")
    p.add_argument("--max-levels", dest="max_levels", type=int, help="level cap (default 12)")

    return parser


_DEFAULTS = {
    "d": 1,
    "s": 0.75,
    "eps_model": 0.01,
    "t_final": 1.0,
    "kind": "crank-nicolson",
    "scheme": "milstein",
    "samples": 4000,
    "seed": 0,
    "out": None,
    "x0": None,
    "spectrum": "dirichlet",
    "coupling": "both",
    "m_list": None,
    "n_list": None,
    "m_fixed": 512,
    "k_fixed": None,
    "eps": None,
    "m0": 2,
    "max_levels": 12,
}


_CONFIG_ALIASES = {
    "variance-decay": {"M": "m_list", "T": "t_final"},
    "euler-gap": {"M": "m_list", "T": "t_final"},
    "spatial-error": {"M": "m_fixed", "N": "n_list", "K": "k_fixed", "T": "t_final"},
    "mlmc-run": {"M0": "m0", "T": "t_final", "max-levels": "max_levels"},
}


def _merge_config(args: argparse.Namespace) -> dict:
    merged = dict(_DEFAULTS)
    merged["workers"] = None
    aliases = _CONFIG_ALIASES.get(args.command, {})
    if getattr(args, "config", None):
        with open(args.config) as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise ValueError("config file must hold a JSON object of key/value pairs")
        for key, value in loaded.items():
            key = aliases.get(key, key.replace("-", "_"))
            if key in ("m_list", "n_list") and value is not None:
                value = _int_list(value) if isinstance(value, str) else [int(v) for v in value]
            merged[key] = value
    for key, value in vars(args).items():
        if key in ("command", "config"):
            continue
        if value is not None:
            merged[key] = value
    if merged.get("workers") is None:
        merged["workers"] = _default_workers()
    return merged


def _problem_from(cfg: dict, command: str) -> Problem:
    start = cfg.get("x0")
    if start is None:
        # The convergence studies measure pure noise response by default;
        # estimator runs keep the reference initial data.
        start = "zero" if command in ("variance-decay", "spatial-error") else "reference"
    return Problem(
        d=int(cfg["d"]),
        s=float(cfg["s"]),
        eps=float(cfg["eps_model"]),
        t_final=float(cfg["t_final"]),
        kind=_KINDS[cfg["kind"]],
        milstein=cfg["scheme"] != "euler",
        start=start,
        spectrum=cfg["spectrum"],
    )


def _print_fit(label: str, pairs) -> None:
    pairs = [(x, y) for x, y in pairs if y > 0]
    if len(pairs) < 3:
        print(f"  {label}: not enough positive points for a slope fit")
        return
    slope, err = fit_slope(pairs)
    print(f"  {label}: log-log slope {slope:+.4f} +/- {err:.4f}")


def run(command: str, cfg: dict) -> int:
    problem = _problem_from(cfg, command)
    seed = int(cfg["seed"])
    workers = int(cfg["workers"])
    out = cfg["out"] or f"{command}.csv"

    if command == "variance-decay":
        m_list = cfg["m_list"] or [2, 4, 8, 16, 32, 64, 128, 256, 512]
        rows = variance_decay_sweep(
            problem, m_list, int(cfg["samples"]), seed, workers=workers
        )
        write_csv(out, command, rows)
        print(f"wrote {out} ({len(rows)} rows)")
        alpha = min(1.0 + problem.s, 2.0)
        if cfg["coupling"] in ("both", "antithetic"):
            _print_fit(
                f"antithetic variance (reference -min(1+s,2) = {-alpha:g})",
                [(r["M"], r["var_antithetic"]) for r in rows],
            )
        if cfg["coupling"] in ("both", "standard"):
            _print_fit(
                "standard variance (reference -1)",
                [(r["M"], r["var_standard"]) for r in rows],
            )
    elif command == "spatial-error":
        n_list = cfg["n_list"] or [2, 4, 8, 16, 32]
        rows = spatial_error_sweep(
            problem,
            n_list,
            m_fixed=int(cfg["m_fixed"]),
            k_fixed=cfg["k_fixed"],
            n_samples=int(cfg["samples"]),
            master_seed=seed,
            workers=workers,
        )
        write_csv(out, command, rows)
        print(f"wrote {out} ({len(rows)} rows)")
        ref = -min(1.0 + problem.s, 2.0) / problem.d
        _print_fit(
            f"spatial error (reference {ref:g})", [(r["N"], r["l2_diff"]) for r in rows]
        )
    elif command == "euler-gap":
        m_list = cfg["m_list"] or [4, 8, 16, 32, 64, 128, 256]
        rows = euler_gap_sweep(
            problem, m_list, int(cfg["samples"]), seed, workers=workers
        )
        write_csv(out, command, rows)
        print(f"wrote {out} ({len(rows)} rows)")
        _print_fit(
            "squared scheme gap (reference -1)",
            [(r["M"], r["l2_gap"] ** 2) for r in rows],
        )
    elif command == "mlmc-run":
        if cfg["eps"] is None:
            raise ValueError("mlmc-run requires --eps (target accuracy)")
        report = mlmc_estimate(
            problem,
            float(cfg["eps"]),
            master_seed=seed,
            workers=workers,
            m0=int(cfg["m0"]),
            max_levels=int(cfg["max_levels"]),
        )
        rows = [
            {
                "level": st.params.ell,
                "M": st.params.m_steps,
                "N": st.params.n_modes,
                "K": st.params.k_effective,
                "n_samples": st.n_samples,
                "mean_diff": st.mean_diff,
                "var_diff": st.var_diff,
                "cost": st.cost_total,
            }
            for st in report.levels
        ]
        write_csv(out, command, rows)
        print(f"wrote {out} ({len(rows)} rows)")
        print(
            f"  estimate {report.estimate:.8g}  (target rmse {report.epsilon:g}, "
            f"statistical variance {report.achieved_variance:.3g}, cost {report.total_cost:.4g})"
        )
        for st in report.levels:
            print(
                f"  level {st.params.ell}: M={st.params.m_steps} N={st.params.n_modes} "
                f"K={st.params.k_effective} n={st.n_samples} mean={st.mean_diff:+.6g} "
                f"var={st.var_diff:.4g}"
            )
    else:  # pragma: no cover - argparse restricts choices
        raise ValueError(f"unknown command {command!r}")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        cfg = _merge_config(args)
        return run(args.command, cfg)
    except (ValueError, argparse.ArgumentTypeError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SimulationError, RuntimeError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
