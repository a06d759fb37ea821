"""Level balancing, antithetic multilevel estimation, and experiment sweeps.

Levels double the step count, M_l = M0 * 2^l, and the remaining resolution
parameters are balanced against the time error:

    N_l = ceil(M_l^(alpha / (2*alpha_tilde))),
    K_l = ceil(M_l^(alpha / (2*beta))),

with K clamped to the model's active noise band (modes beyond the band
cannot influence the state, so the clamp changes nothing but the cost).
The estimator telescopes level differences of the antithetic pair average
against the coarser discretization, with the level-0 term defined as zero so
the l=1 term carries the full base expectation.

Sampling is data parallel: the unit of work is a fixed-size batch of sample
indices, each sample owns a counter-based stream keyed by
(master_seed, level, index), and per-batch partial results are merged in
batch order, so reports are bit-identical for any worker count.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context
from typing import Callable, Sequence

import numpy as np

from .models import Problem
from .noise import StreamKey, derive_stream, draw_block_array, draw_step_increments
from .stepping import (
    CoupledParams,
    PathSpec,
    effective_noise_width,
    run_coupled_batch,
    run_pair_batch,
)

__all__ = [
    "RateParams",
    "LevelParams",
    "LevelStats",
    "EstimatorReport",
    "first_coefficient",
    "balanced_dims",
    "balance_params",
    "estimate_level",
    "allocate_samples",
    "mlmc_estimate",
    "variance_decay_sweep",
    "spatial_error_sweep",
    "euler_gap_sweep",
]

_K_SATURATION = 2**62


def first_coefficient(states: np.ndarray) -> np.ndarray:
    """Default quantity of interest: projection onto the first eigenmode."""
    return np.asarray(states)[..., 0]


@dataclass(frozen=True)
class RateParams:
    """Convergence/cost exponents steering the level balancing."""

    alpha: float  # mean-square decay rate in M of the antithetic pair
    alpha_tilde: float  # spatial rate of the Galerkin projection
    beta: float  # noise truncation rate
    gamma: float  # cost exponent: one sample costs O(M^(1+gamma))
    delta: float = 0.05  # slack in the weak rate M^-(1-delta)

    def __post_init__(self):
        if min(self.alpha, self.alpha_tilde, self.beta, self.gamma) <= 0:
            raise ValueError("all rate parameters must be positive")
        if not (0 < self.delta < 1):
            raise ValueError("delta must lie in (0,1)")

    @classmethod
    def from_problem(cls, d: int, s: float, delta: float = 0.05) -> "RateParams":
        beta = (2.0 * s / d - 1.0) / 2.0
        if beta <= 0:
            raise ValueError(f"s={s} gives no noise decay in d={d} (need s > d/2)")
        alpha = min(1.0 + s, 2.0)
        alpha_tilde = alpha / d
        gamma = max(d / 2.0, alpha / (2.0 * beta))
        return cls(alpha=alpha, alpha_tilde=alpha_tilde, beta=beta, gamma=gamma, delta=delta)


@dataclass(frozen=True)
class LevelParams:
    """Resolved discretization parameters of one level."""

    ell: int
    m_steps: int
    n_modes: int
    k_modes: int
    k_effective: int


def balanced_dims(m_steps: int, rates: RateParams, band=None) -> tuple[int, int, int]:
    """(N, K, K_effective) balancing spatial/noise error against M^-alpha."""
    n = math.ceil(m_steps ** (rates.alpha / (2.0 * rates.alpha_tilde)))
    expo = rates.alpha / (2.0 * rates.beta)
    if expo * math.log2(max(m_steps, 2)) >= 62:
        warnings.warn(
            f"balanced truncation K = M^{expo:.3g} overflows at M={m_steps}; "
            "saturating (harmless for band-limited noise)",
            RuntimeWarning,
            stacklevel=2,
        )
        k = _K_SATURATION
    else:
        k = math.ceil(m_steps**expo)
    k_eff = min(k, int(band(n))) if band is not None else k
    return n, k, k_eff


def balance_params(m0: int, ell: int, rates: RateParams, band=None) -> LevelParams:
    """Level parameters M_l = m0 * 2^l with balanced N and K."""
    if m0 < 2:
        raise ValueError(f"base step count must be >= 2, got {m0}")
    if ell < 0:
        raise ValueError(f"level index must be >= 0, got {ell}")
    m = m0 * (2**ell)
    n, k, k_eff = balanced_dims(m, rates, band)
    return LevelParams(ell=ell, m_steps=m, n_modes=n, k_modes=k, k_effective=k_eff)


@dataclass
class LevelStats:
    """Sampling summary of one level's coupled difference."""

    params: LevelParams
    n_samples: int
    mean_diff: float
    var_diff: float
    mean_fine: float
    cost_total: float

    @property
    def standard_error(self) -> float:
        return math.sqrt(max(self.var_diff, 0.0) / self.n_samples)

    @property
    def cost_per_sample(self) -> float:
        return self.cost_total / self.n_samples


@dataclass
class EstimatorReport:
    """Outcome of one multilevel run."""

    estimate: float
    levels: list[LevelStats]
    total_cost: float
    epsilon: float
    achieved_variance: float

    def to_json(self) -> str:
        import json

        payload = {
            "estimate": self.estimate,
            "epsilon": self.epsilon,
            "total_cost": self.total_cost,
            "achieved_variance": self.achieved_variance,
            "levels": [
                {
                    "level": s.params.ell,
                    "M": s.params.m_steps,
                    "N": s.params.n_modes,
                    "K": s.params.k_effective,
                    "n_samples": s.n_samples,
                    "mean_diff": s.mean_diff,
                    "var_diff": s.var_diff,
                    "mean_fine": s.mean_fine,
                    "cost": s.cost_total,
                }
                for s in self.levels
            ],
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# deterministic batched sampling machinery


def _batch_size(m_steps: int, k_draw: int) -> int:
    """Fixed batch size from the discretization only (keeps runs reproducible)."""
    bytes_per_sample = m_steps * 2 * max(k_draw, 1) * 8
    return int(min(2048, max(16, 48_000_000 // max(bytes_per_sample, 1))))


def _index_units(i0: int, i1: int, batch: int):
    """Batch-aligned index ranges covering [i0, i1)."""
    units = []
    start = i0
    while start < i1:
        stop = min(((start // batch) + 1) * batch, i1)
        units.append((start, stop))
        start = stop
    return units


def _map_jobs(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    try:
        ctx = get_context("fork")
    except ValueError:  # pragma: no cover - non-posix fallback
        ctx = get_context()
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs)), mp_context=ctx) as ex:
        return list(ex.map(fn, jobs))


@dataclass(frozen=True)
class _CoupledJob:
    problem: Problem
    params: CoupledParams
    level_key: int
    seed: int
    i0: int
    i1: int
    psi: Callable | None


def _run_coupled_job(job: _CoupledJob):
    params = job.params
    model_f = job.problem.model(params.n_fine)
    k_draw = effective_noise_width(model_f, params.n_fine, params.k_fine)
    n = job.i1 - job.i0
    blocks = np.empty((n, params.m_coarse, 2, k_draw))
    for j, i in enumerate(range(job.i0, job.i1)):
        stream = derive_stream(StreamKey(job.seed, job.level_key, i))
        blocks[j] = draw_block_array(stream, params.m_coarse, k_draw, params.dt)
    res = run_coupled_batch(params, job.problem.model, blocks)
    out = {
        "max_sq_avg": res.max_sq_avg,
        "max_sq_fine": res.max_sq_fine,
        "sum_sq_avg": res.sum_sq_avg,
        "sumsq_sq_avg": res.sumsq_sq_avg,
        "sum_sq_fine": res.sum_sq_fine,
        "sumsq_sq_fine": res.sumsq_sq_fine,
        "cost_per_sample": res.cost_per_sample,
    }
    if job.psi is not None:
        out["psi_bar"] = 0.5 * (job.psi(res.y_fine) + job.psi(res.y_anti))
        out["psi_coarse"] = np.asarray(job.psi(res.y_coarse), dtype=np.float64)
    return out


def _sample_coupled(
    problem: Problem,
    params: CoupledParams,
    level_key: int,
    seed: int,
    i0: int,
    i1: int,
    psi,
    workers: int,
):
    """Per-sample arrays and per-grid-point sums for sample indices [i0, i1)."""
    model_f = problem.model(params.n_fine)
    k_draw = effective_noise_width(model_f, params.n_fine, params.k_fine)
    units = _index_units(i0, i1, _batch_size(params.m_coarse, k_draw))
    jobs = [
        _CoupledJob(problem, params, level_key, seed, a, b, psi) for a, b in units
    ]
    parts = _map_jobs(_run_coupled_job, jobs, workers)
    merged = {}
    for key in ("max_sq_avg", "max_sq_fine", "psi_bar", "psi_coarse"):
        if key in parts[0]:
            merged[key] = np.concatenate([p[key] for p in parts])
    for key in ("sum_sq_avg", "sumsq_sq_avg", "sum_sq_fine", "sumsq_sq_fine"):
        total = parts[0][key].copy()
        for p in parts[1:]:
            total += p[key]
        merged[key] = total
    merged["cost_per_sample"] = parts[0]["cost_per_sample"]
    return merged


def _coupled_params_for_level(
    problem: Problem, rates: RateParams, m0: int, ell: int
) -> tuple[CoupledParams, LevelParams, LevelParams]:
    band = lambda n: problem.model(n).noise_band(n)  # noqa: E731
    fine = balance_params(m0, ell, rates, band)
    coarse = balance_params(m0, ell - 1, rates, band) if ell >= 1 else fine
    params = CoupledParams(
        t_final=problem.t_final,
        m_coarse=coarse.m_steps,
        n_coarse=coarse.n_modes,
        k_coarse=coarse.k_effective,
        n_fine=fine.n_modes,
        k_fine=fine.k_effective,
        kind=problem.kind,
        milstein=problem.milstein,
    )
    return params, fine, coarse


def estimate_level(
    problem: Problem,
    ell: int,
    n_samples: int,
    psi: Callable = first_coefficient,
    master_seed: int = 0,
    *,
    rates: RateParams | None = None,
    m0: int = 2,
    workers: int = 1,
) -> LevelStats:
    """Sample the level-ell telescoping term with n independent couples.

    For ell >= 2 the term is the antithetic pair average minus the coarse
    functional; at the base level ell = 1 the coarse term is defined as zero.
    """
    if ell < 1:
        raise ValueError("levels are indexed from 1")
    if n_samples < 2:
        raise ValueError("need at least two samples for a variance estimate")
    rates = rates or RateParams.from_problem(problem.d, problem.s)
    params, fine, _ = _coupled_params_for_level(problem, rates, m0, ell)
    res = _sample_coupled(problem, params, ell, master_seed, 0, n_samples, psi, workers)
    diffs = res["psi_bar"] - res["psi_coarse"] if ell >= 2 else res["psi_bar"]
    return LevelStats(
        params=fine,
        n_samples=n_samples,
        mean_diff=float(np.mean(diffs)),
        var_diff=float(np.var(diffs, ddof=1)),
        mean_fine=float(np.mean(res["psi_bar"])),
        cost_total=float(res["cost_per_sample"] * n_samples),
    )


def allocate_samples(
    stats: Sequence[LevelStats], eps: float, *, floor: int = 10
) -> list[int]:
    """Optimal per-level sample counts for a variance budget of eps^2 / 2.

    n_l = ceil((2/eps^2) * sqrt(V_l/C_l) * sum_j sqrt(V_j C_j)); levels with
    zero variance keep the floor.  By construction sum_l V_l/n_l <= eps^2/2.
    """
    if eps <= 0:
        raise ValueError("target accuracy must be positive")
    v = np.array([max(s.var_diff, 0.0) for s in stats])
    c = np.array([s.cost_per_sample for s in stats])
    total = float(np.sum(np.sqrt(v * c)))
    counts = []
    for vl, cl in zip(v, c):
        if vl <= 0.0 or total <= 0.0:
            counts.append(floor)
        else:
            counts.append(max(floor, math.ceil((2.0 / eps**2) * math.sqrt(vl / cl) * total)))
    return counts


@dataclass
class _LevelAccumulator:
    params: CoupledParams
    fine: LevelParams
    diffs: np.ndarray = field(default_factory=lambda: np.empty(0))
    psi_bar: np.ndarray = field(default_factory=lambda: np.empty(0))
    cost_per_sample: float = 0.0

    @property
    def n(self) -> int:
        return self.diffs.shape[0]

    def stats(self) -> LevelStats:
        return LevelStats(
            params=self.fine,
            n_samples=self.n,
            mean_diff=float(np.mean(self.diffs)),
            var_diff=float(np.var(self.diffs, ddof=1)),
            mean_fine=float(np.mean(self.psi_bar)),
            cost_total=float(self.cost_per_sample * self.n),
        )


def mlmc_estimate(
    problem: Problem,
    eps: float,
    psi: Callable = first_coefficient,
    master_seed: int = 0,
    *,
    rates: RateParams | None = None,
    m0: int = 2,
    workers: int = 1,
    pilot_samples: int = 100,
    sample_floor: int = 10,
    max_levels: int = 12,
    max_rounds: int = 50,
) -> EstimatorReport:
    """Adaptive antithetic multilevel estimator hitting RMSE eps.

    Pilot samples fix the variances, the allocation rule spends the eps^2/2
    variance budget, and levels are appended until the extrapolated weak-rate
    bias |mean_diff_L| / (2^(1-delta) - 1) fits in the other half budget.
    Raises RuntimeError when the configured level cap is exceeded.
    """
    if not (0.0 < eps < math.exp(-1)):
        raise ValueError(f"target accuracy must lie in (0, e^-1), got {eps}")
    rates = rates or RateParams.from_problem(problem.d, problem.s)
    bias_factor = 2.0 ** (1.0 - rates.delta) - 1.0

    levels: dict[int, _LevelAccumulator] = {}

    def _ensure(ell: int, n_target: int):
        if ell not in levels:
            params, fine, _ = _coupled_params_for_level(problem, rates, m0, ell)
            levels[ell] = _LevelAccumulator(params=params, fine=fine)
        acc = levels[ell]
        if acc.n >= n_target:
            return
        res = _sample_coupled(
            problem, acc.params, ell, master_seed, acc.n, n_target, psi, workers
        )
        diffs = res["psi_bar"] - res["psi_coarse"] if ell >= 2 else res["psi_bar"]
        acc.diffs = np.concatenate([acc.diffs, diffs])
        acc.psi_bar = np.concatenate([acc.psi_bar, res["psi_bar"]])
        acc.cost_per_sample = res["cost_per_sample"]

    n_levels = 2
    for ell in range(1, n_levels + 1):
        _ensure(ell, pilot_samples)

    for _ in range(max_rounds):
        stats = [levels[ell].stats() for ell in range(1, n_levels + 1)]
        counts = allocate_samples(stats, eps, floor=sample_floor)
        if all(levels[ell].n >= c for ell, c in zip(range(1, n_levels + 1), counts)):
            top = stats[-1]
            bias = abs(top.mean_diff) / bias_factor
            if bias <= eps / math.sqrt(2.0):
                break
            n_levels += 1
            if n_levels > max_levels:
                raise RuntimeError(
                    f"accuracy eps={eps} needs more than the configured cap of "
                    f"{max_levels} levels; refusing"
                )
            _ensure(n_levels, pilot_samples)
        else:
            for ell, c in zip(range(1, n_levels + 1), counts):
                _ensure(ell, c)
    else:
        raise RuntimeError("sample allocation did not stabilize; increase max_rounds")

    stats = [levels[ell].stats() for ell in range(1, n_levels + 1)]
    estimate = float(sum(s.mean_diff for s in stats))
    total_cost = float(sum(s.cost_total for s in stats))
    achieved = float(sum(s.var_diff / s.n_samples for s in stats))
    return EstimatorReport(
        estimate=estimate,
        levels=stats,
        total_cost=total_cost,
        epsilon=eps,
        achieved_variance=achieved,
    )


# ---------------------------------------------------------------------------
# experiment sweeps


def _max_mean_and_se(sum_sq: np.ndarray, sumsq_sq: np.ndarray, n: int):
    """Max over grid points of the per-point sample mean, with its SE."""
    means = sum_sq / n
    m_star = int(np.argmax(means))
    value = float(means[m_star])
    if n > 1:
        var_hat = (sumsq_sq[m_star] / n - value**2) * n / (n - 1)
        se = math.sqrt(max(var_hat, 0.0) / n)
    else:
        se = float("nan")
    return value, se


def variance_decay_sweep(
    problem: Problem,
    m_list: Sequence[int],
    n_samples: int,
    master_seed: int = 0,
    *,
    rates: RateParams | None = None,
    workers: int = 1,
) -> list[dict]:
    """Coupling variance against the coarse step count M.

    For each M both resolutions share the balanced (N, K) at M; the fine pair
    runs at step dt/2.  Each row reports the antithetic statistic
    max_m mean|Ybar_m - Yc_m|^2 and the plain fine/coarse statistic
    max_m mean|Yf_m - Yc_m|^2 over the same samples, with the mean of the
    per-sample path maxima kept as a secondary diagnostic.
    """
    rates = rates or RateParams.from_problem(problem.d, problem.s)
    band = lambda n: problem.model(n).noise_band(n)  # noqa: E731
    rows = []
    for key, m in enumerate(m_list):
        n_modes, k_raw, k_eff = balanced_dims(m, rates, band)
        params = CoupledParams(
            t_final=problem.t_final,
            m_coarse=m,
            n_coarse=n_modes,
            k_coarse=k_eff,
            n_fine=n_modes,
            k_fine=k_eff,
            kind=problem.kind,
            milstein=problem.milstein,
        )
        res = _sample_coupled(problem, params, key, master_seed, 0, n_samples, None, workers)
        var_a, se_a = _max_mean_and_se(res["sum_sq_avg"], res["sumsq_sq_avg"], n_samples)
        var_s, se_s = _max_mean_and_se(res["sum_sq_fine"], res["sumsq_sq_fine"], n_samples)
        rows.append(
            {
                "d": problem.d,
                "s": problem.s,
                "M": m,
                "N": n_modes,
                "K": k_raw,
                "K_effective": k_eff,
                "var_antithetic": var_a,
                "se_antithetic": se_a,
                "var_standard": var_s,
                "se_standard": se_s,
                "n_samples": n_samples,
                # secondary diagnostics: expectation of the path maximum
                "emax_antithetic": float(np.mean(res["max_sq_avg"])),
                "emax_standard": float(np.mean(res["max_sq_fine"])),
            }
        )
    return rows


@dataclass(frozen=True)
class _PairJob:
    problem: Problem
    dt: float
    n_steps: int
    spec_a: PathSpec
    spec_b: PathSpec
    k_draw: int
    level_key: int
    seed: int
    i0: int
    i1: int


def _run_pair_job(job: _PairJob):
    n = job.i1 - job.i0
    increments = np.empty((n, job.n_steps, job.k_draw))
    for j, i in enumerate(range(job.i0, job.i1)):
        stream = derive_stream(StreamKey(job.seed, job.level_key, i))
        increments[j] = draw_step_increments(stream, job.n_steps, job.k_draw, job.dt)
    max_sq, sum_sq, sumsq_sq, _, _ = run_pair_batch(
        job.problem.kind,
        job.dt,
        job.n_steps,
        job.problem.model,
        job.spec_a,
        job.spec_b,
        increments,
    )
    return {"max_sq": max_sq, "sum_sq": sum_sq, "sumsq_sq": sumsq_sq}


def _sample_pair(
    problem: Problem,
    dt: float,
    n_steps: int,
    spec_a: PathSpec,
    spec_b: PathSpec,
    k_draw: int,
    level_key: int,
    seed: int,
    n_samples: int,
    workers: int,
):
    units = _index_units(0, n_samples, _batch_size(n_steps, k_draw))
    jobs = [
        _PairJob(problem, dt, n_steps, spec_a, spec_b, k_draw, level_key, seed, a, b)
        for a, b in units
    ]
    parts = _map_jobs(_run_pair_job, jobs, workers)
    sum_sq = parts[0]["sum_sq"].copy()
    sumsq_sq = parts[0]["sumsq_sq"].copy()
    for p in parts[1:]:
        sum_sq += p["sum_sq"]
        sumsq_sq += p["sumsq_sq"]
    return sum_sq, sumsq_sq


def spatial_error_sweep(
    problem: Problem,
    n_list: Sequence[int],
    m_fixed: int = 512,
    k_fixed: int | None = None,
    n_samples: int = 4000,
    master_seed: int = 0,
    *,
    workers: int = 1,
) -> list[dict]:
    """Distance between N-mode and ceil(sqrt(2)N)-mode runs on shared noise.

    Reports per N the root of max_m mean|Y^N_m - Y^Nf_m|^2 (the discrete
    L2(Omega;H) distance) at a fixed, fine time grid.
    """
    rows = []
    for key, n_modes in enumerate(n_list):
        n_fine = math.ceil(math.sqrt(2.0) * n_modes)
        band = problem.model(n_fine).noise_band(n_fine)
        k_req = k_fixed if k_fixed is not None else int(band)
        k_draw = int(min(k_req, band))
        dt = problem.t_final / m_fixed
        spec_a = PathSpec(n_modes=n_modes, k_modes=k_draw, milstein=problem.milstein)
        spec_b = PathSpec(n_modes=n_fine, k_modes=k_draw, milstein=problem.milstein)
        sum_sq, sumsq_sq = _sample_pair(
            problem, dt, m_fixed, spec_a, spec_b, k_draw, key, master_seed, n_samples, workers
        )
        sq_val, sq_se = _max_mean_and_se(sum_sq, sumsq_sq, n_samples)
        l2 = math.sqrt(sq_val)
        se = sq_se / (2.0 * l2) if l2 > 0 else 0.0
        rows.append(
            {
                "d": problem.d,
                "s": problem.s,
                "N": n_modes,
                "N_fine": n_fine,
                "M": m_fixed,
                "K": k_draw,
                "l2_diff": l2,
                "se": se,
                "n_samples": n_samples,
            }
        )
    return rows


def euler_gap_sweep(
    problem: Problem,
    m_list: Sequence[int],
    n_samples: int = 4000,
    master_seed: int = 0,
    *,
    rates: RateParams | None = None,
    n_modes: int | None = None,
    k_modes: int | None = None,
    workers: int = 1,
) -> list[dict]:
    """L2(Omega;H) distance between the corrected and plain Euler schemes.

    Both schemes consume identical increments.  The spatial and noise
    resolutions stay fixed across the sweep (defaulting to the balanced
    dimensions at the largest M) so that only the time step varies, which is
    the regime of the O(M^-1/2) gap bound.
    """
    rates = rates or RateParams.from_problem(problem.d, problem.s)
    band = lambda n: problem.model(n).noise_band(n)  # noqa: E731
    if n_modes is None:
        n_modes, _, k_default = balanced_dims(max(m_list), rates, band)
    else:
        k_default = min(k_modes or n_modes, int(band(n_modes)))
    k_eff = k_default if k_modes is None else min(k_modes, int(band(n_modes)))
    rows = []
    for key, m in enumerate(m_list):
        dt = problem.t_final / m
        spec_euler = PathSpec(n_modes=n_modes, k_modes=k_eff, milstein=False)
        spec_milstein = PathSpec(n_modes=n_modes, k_modes=k_eff, milstein=True)
        sum_sq, sumsq_sq = _sample_pair(
            problem, dt, m, spec_euler, spec_milstein, k_eff, key, master_seed, n_samples, workers
        )
        sq_val, sq_se = _max_mean_and_se(sum_sq, sumsq_sq, n_samples)
        gap = math.sqrt(sq_val)
        se = sq_se / (2.0 * gap) if gap > 0 else 0.0
        rows.append(
            {
                "d": problem.d,
                "s": problem.s,
                "M": m,
                "l2_gap": gap,
                "se": se,
                "n_samples": n_samples,
            }
        )
    return rows
