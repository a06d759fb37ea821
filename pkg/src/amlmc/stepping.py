"""Time steppers and coupled coarse/fine/antithetic path simulation.

One plain step of the truncated Milstein scheme maps the coefficient state
through

    y' = r(dt * Lambda) * (y + F(y) dt + diffusion(y, dw) + correction(y, dw, dt))

and the Euler variant simply drops the correction.  A *macro* step of the
fine discretization is two such steps at dt/2 consuming the two halves of an
increment block; the antithetic twin consumes them in swapped order.  The
coarse companion takes one step at dt with the summed increments, so running
all three on a shared stream realizes the multilevel coupling.

Everything here is pure: drivers own their scratch buffers and their stream,
so any number of instances can run concurrently.  The batched drivers
process many samples at once but are sample-row invariant (a sample's output
does not depend on which batch it sits in), which is what makes multi-worker
runs bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import backend
from .models import DiffusionModel
from .noise import IncrementBlock, antithetic_view, draw_block_array
from .spectral import ModeBasis, RationalKind, rational_factors

__all__ = [
    "SimulationError",
    "StepConfig",
    "CoupledParams",
    "CoupledResult",
    "PathSpec",
    "milstein_step",
    "fine_macro_step",
    "antithetic_macro_step",
    "simulate_coupled",
    "run_coupled_batch",
    "run_path_batch",
    "run_pair_batch",
]


class SimulationError(RuntimeError):
    """A sample produced a non-finite state; statistics would be poisoned."""

    def __init__(self, message: str, n_bad: int = 1):
        super().__init__(message)
        self.n_bad = n_bad


@dataclass(frozen=True)
class StepConfig:
    """Discretization of one plain path."""

    kind: RationalKind
    dt: float
    n_modes: int
    k_modes: int
    milstein: bool = True

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"time step must be positive, got {self.dt}")
        if self.n_modes < 1 or self.k_modes < 1:
            raise ValueError("mode counts must be >= 1")


def _substep_batch(
    y: np.ndarray,
    rfac: np.ndarray,
    model: DiffusionModel,
    dw: np.ndarray,
    dt: float,
    k_modes: int,
    milstein: bool,
    out: np.ndarray,
) -> None:
    """Dispatch one batched sub-step to the banded kernel or the generic path."""
    if getattr(model, "banded", False):
        backend.shift_substep(y, rfac, model.g_coeffs, dw, k_modes, milstein, out)
        return
    for i in range(y.shape[0]):
        acc = y[i] + model.drift(y[i]) * dt
        acc = acc + model.apply_diffusion(y[i], dw[i], k_modes)
        if milstein:
            acc = acc + model.apply_correction(y[i], dw[i], dt, k_modes)
        out[i] = rfac * acc


def milstein_step(
    y: np.ndarray,
    cfg: StepConfig,
    model: DiffusionModel,
    dw: np.ndarray,
    basis: ModeBasis,
) -> np.ndarray:
    """One step of the truncated Milstein scheme (Euler if cfg.milstein is False)."""
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.shape[0] != cfg.n_modes:
        raise ValueError(f"state has {y.shape[0]} coefficients, expected {cfg.n_modes}")
    if not np.all(np.isfinite(y)):
        raise SimulationError("non-finite state entering time step")
    rfac = rational_factors(cfg.kind, cfg.dt, basis.lambdas[: cfg.n_modes])
    out = np.empty_like(y)
    _substep_batch(
        y[None, :],
        rfac,
        model,
        np.ascontiguousarray(dw, dtype=np.float64)[None, :],
        cfg.dt,
        cfg.k_modes,
        cfg.milstein,
        out[None, :],
    )
    return out


def fine_macro_step(
    y: np.ndarray,
    cfg: StepConfig,
    model: DiffusionModel,
    block: IncrementBlock,
    basis: ModeBasis,
) -> np.ndarray:
    """Two half steps at cfg.dt/2 consuming the block halves in order."""
    half = replace(cfg, dt=0.5 * cfg.dt)
    y = milstein_step(y, half, model, block.first_half, basis)
    return milstein_step(y, half, model, block.second_half, basis)


def antithetic_macro_step(
    y: np.ndarray,
    cfg: StepConfig,
    model: DiffusionModel,
    block: IncrementBlock,
    basis: ModeBasis,
) -> np.ndarray:
    """The fine macro step on the swapped block."""
    return fine_macro_step(y, cfg, model, antithetic_view(block), basis)


@dataclass(frozen=True)
class CoupledParams:
    """Coupled pair layout: coarse at m_coarse steps, fine/anti at twice that."""

    t_final: float
    m_coarse: int
    n_coarse: int
    k_coarse: int
    n_fine: int
    k_fine: int
    kind: RationalKind = RationalKind.CRANK_NICOLSON
    milstein: bool = True

    def __post_init__(self):
        if self.t_final <= 0 or self.m_coarse < 1:
            raise ValueError("need t_final > 0 and at least one coarse step")
        if self.n_fine < self.n_coarse:
            raise ValueError(
                f"fine Galerkin dimension {self.n_fine} below coarse {self.n_coarse}"
            )
        if self.k_fine < self.k_coarse:
            raise ValueError(f"fine truncation {self.k_fine} below coarse {self.k_coarse}")

    @property
    def dt(self) -> float:
        return self.t_final / self.m_coarse


@dataclass
class CoupledResult:
    """Terminal states and path diagnostics of one coupled sample."""

    y_coarse: np.ndarray
    y_fine: np.ndarray
    y_anti: np.ndarray
    y_avg: np.ndarray
    max_sq_diff_avg: float
    max_sq_diff_fine: float
    cost: float


@dataclass
class CoupledBatchResult:
    y_coarse: np.ndarray  # (B, n_coarse)
    y_fine: np.ndarray  # (B, n_fine)
    y_anti: np.ndarray  # (B, n_fine)
    max_sq_avg: np.ndarray  # (B,)
    max_sq_fine: np.ndarray  # (B,)
    sum_sq_avg: np.ndarray  # (M+1,) batch sums of |avg - coarse|^2 per grid point
    sumsq_sq_avg: np.ndarray  # (M+1,) batch sums of the squares of the same
    sum_sq_fine: np.ndarray  # (M+1,)
    sumsq_sq_fine: np.ndarray  # (M+1,)
    cost_per_sample: float


def _check_finite(batch_arrays, what: str) -> None:
    bad = None
    for arr in batch_arrays:
        flags = ~np.isfinite(arr).all(axis=tuple(range(1, arr.ndim)))
        bad = flags if bad is None else (bad | flags)
    n_bad = int(bad.sum())
    if n_bad:
        raise SimulationError(f"{n_bad} sample(s) produced non-finite {what}", n_bad)


def run_coupled_batch(
    params: CoupledParams,
    model_factory,
    blocks: np.ndarray,
    basis_factory=None,
) -> CoupledBatchResult:
    """Simulate a batch of coupled coarse/fine/antithetic triples.

    ``blocks`` holds whitened half-step draws of shape (B, M, 2, k_draw)
    with k_draw = the effective fine truncation min(k_fine, noise band of
    n_fine); the model's covariance scaling is applied here, in place.
    Diagnostics are recorded on the coarse grid, m = 0..M, with the coarse
    state zero-padded into the fine space.
    """
    model_f = model_factory(params.n_fine)
    model_c = model_factory(params.n_coarse)
    basis_f = basis_factory(params.n_fine) if basis_factory else model_f.basis
    blocks = blocks * model_f.increment_scale(blocks.shape[-1])

    m_steps = params.m_coarse
    n_c, n_f = params.n_coarse, params.n_fine
    dt = params.dt
    b_size = blocks.shape[0]

    rf = rational_factors(params.kind, 0.5 * dt, basis_f.lambdas[:n_f])
    rc = rational_factors(params.kind, dt, basis_f.lambdas[:n_c])

    x0_f = model_f.x0_coeffs[:n_f] if hasattr(model_f, "x0_coeffs") else np.zeros(n_f)
    yf = np.tile(x0_f, (b_size, 1))
    ya = yf.copy()
    yc = yf[:, :n_c].copy()
    out_f = np.empty_like(yf)
    out_a = np.empty_like(ya)
    out_c = np.empty_like(yc)

    sum_sq_avg = np.zeros(m_steps + 1)
    sumsq_sq_avg = np.zeros(m_steps + 1)
    sum_sq_fine = np.zeros(m_steps + 1)
    sumsq_sq_fine = np.zeros(m_steps + 1)

    def _record(m: int):
        ybar = 0.5 * (yf + ya)
        diff_a = ybar.copy()
        diff_a[:, :n_c] -= yc
        sq_a = np.sum(diff_a * diff_a, axis=1)
        diff_f = yf.copy()
        diff_f[:, :n_c] -= yc
        sq_f = np.sum(diff_f * diff_f, axis=1)
        sum_sq_avg[m] = np.sum(sq_a)
        sumsq_sq_avg[m] = np.sum(sq_a * sq_a)
        sum_sq_fine[m] = np.sum(sq_f)
        sumsq_sq_fine[m] = np.sum(sq_f * sq_f)
        return sq_a, sq_f

    sq_a, sq_f = _record(0)
    max_sq_avg = sq_a.copy()
    max_sq_fine = sq_f.copy()

    kf = params.k_fine
    kc = params.k_coarse
    mil = params.milstein
    with np.errstate(over="ignore", invalid="ignore"):
        for m in range(m_steps):
            first = blocks[:, m, 0, :]
            second = blocks[:, m, 1, :]
            _substep_batch(yf, rf, model_f, first, 0.5 * dt, kf, mil, out_f)
            yf, out_f = out_f, yf
            _substep_batch(yf, rf, model_f, second, 0.5 * dt, kf, mil, out_f)
            yf, out_f = out_f, yf
            _substep_batch(ya, rf, model_f, second, 0.5 * dt, kf, mil, out_a)
            ya, out_a = out_a, ya
            _substep_batch(ya, rf, model_f, first, 0.5 * dt, kf, mil, out_a)
            ya, out_a = out_a, ya
            dw_coarse = first + second
            _substep_batch(yc, rc, model_c, dw_coarse, dt, kc, mil, out_c)
            yc, out_c = out_c, yc
            sq_a, sq_f = _record(m + 1)
            np.maximum(max_sq_avg, sq_a, out=max_sq_avg)
            np.maximum(max_sq_fine, sq_f, out=max_sq_fine)

    _check_finite((yf, ya, yc), "state")
    cost = m_steps * model_c.cost_per_step(n_c, kc) + 4 * m_steps * model_f.cost_per_step(
        n_f, kf
    )
    return CoupledBatchResult(
        y_coarse=yc,
        y_fine=yf,
        y_anti=ya,
        max_sq_avg=max_sq_avg,
        max_sq_fine=max_sq_fine,
        sum_sq_avg=sum_sq_avg,
        sumsq_sq_avg=sumsq_sq_avg,
        sum_sq_fine=sum_sq_fine,
        sumsq_sq_fine=sumsq_sq_fine,
        cost_per_sample=cost,
    )


def effective_noise_width(model: DiffusionModel, n_modes: int, k_modes: int) -> int:
    """Truncation actually sampled: requested K clamped to the model's band."""
    band = model.noise_band(n_modes)
    return int(min(k_modes, band)) if np.isfinite(band) else int(k_modes)


def simulate_coupled(
    params: CoupledParams,
    stream: np.random.Generator,
    model_factory,
    basis_factory=None,
) -> CoupledResult:
    """One coupled sample driven by its own stream."""
    model_f = model_factory(params.n_fine)
    k_draw = effective_noise_width(model_f, params.n_fine, params.k_fine)
    blocks = draw_block_array(stream, params.m_coarse, k_draw, params.dt)[None, ...]
    res = run_coupled_batch(params, model_factory, blocks, basis_factory)
    y_fine = res.y_fine[0]
    y_anti = res.y_anti[0]
    return CoupledResult(
        y_coarse=res.y_coarse[0],
        y_fine=y_fine,
        y_anti=y_anti,
        y_avg=0.5 * (y_fine + y_anti),
        max_sq_diff_avg=float(res.max_sq_avg[0]),
        max_sq_diff_fine=float(res.max_sq_fine[0]),
        cost=res.cost_per_sample,
    )


@dataclass(frozen=True)
class PathSpec:
    """Resolution of one plain path inside a shared-noise comparison."""

    n_modes: int
    k_modes: int
    milstein: bool = True


def run_path_batch(
    kind: RationalKind,
    dt: float,
    n_steps: int,
    model_factory,
    spec: PathSpec,
    increments: np.ndarray,
    basis_factory=None,
    track_sq_norm: bool = False,
):
    """Plain truncated Milstein/Euler paths for a batch of samples.

    ``increments`` holds whitened draws of shape (B, n_steps, k) with
    per-step variance dt; covariance scaling is applied here, in place.
    Returns (final_states, per_m_sum_sq_norm or None).
    """
    model = model_factory(spec.n_modes)
    basis = basis_factory(spec.n_modes) if basis_factory else model.basis
    increments = increments * model.increment_scale(increments.shape[-1])
    rfac = rational_factors(kind, dt, basis.lambdas[: spec.n_modes])
    x0 = model.x0_coeffs[: spec.n_modes] if hasattr(model, "x0_coeffs") else np.zeros(spec.n_modes)
    y = np.tile(x0, (increments.shape[0], 1))
    out = np.empty_like(y)
    per_m = np.zeros(n_steps + 1) if track_sq_norm else None
    if track_sq_norm:
        per_m[0] = np.sum(y * y)
    with np.errstate(over="ignore", invalid="ignore"):
        for m in range(n_steps):
            _substep_batch(
                y, rfac, model, increments[:, m, :], dt, spec.k_modes, spec.milstein, out
            )
            y, out = out, y
            if track_sq_norm:
                per_m[m + 1] = np.sum(y * y)
    _check_finite((y,), "state")
    return y, per_m


def run_pair_batch(
    kind: RationalKind,
    dt: float,
    n_steps: int,
    model_factory,
    spec_a: PathSpec,
    spec_b: PathSpec,
    increments: np.ndarray,
    basis_factory=None,
):
    """Two plain paths on identical increments; track their squared H distance.

    spec_b must not have fewer modes than spec_a; the narrower state is
    zero-padded for the comparison.  Returns per-sample max of the squared
    difference, per-grid-point batch sums and sums of squares, and the final
    states.
    """
    if spec_b.n_modes < spec_a.n_modes:
        raise ValueError("spec_b must be at least as wide as spec_a")
    model_a = model_factory(spec_a.n_modes)
    model_b = model_factory(spec_b.n_modes)
    basis_b = basis_factory(spec_b.n_modes) if basis_factory else model_b.basis
    increments = increments * model_b.increment_scale(increments.shape[-1])
    n_a, n_b = spec_a.n_modes, spec_b.n_modes
    rf_a = rational_factors(kind, dt, basis_b.lambdas[:n_a])
    rf_b = rational_factors(kind, dt, basis_b.lambdas[:n_b])
    b_size = increments.shape[0]
    x0_b = model_b.x0_coeffs[:n_b] if hasattr(model_b, "x0_coeffs") else np.zeros(n_b)
    yb = np.tile(x0_b, (b_size, 1))
    ya = yb[:, :n_a].copy()
    out_a = np.empty_like(ya)
    out_b = np.empty_like(yb)

    sum_sq = np.zeros(n_steps + 1)
    sumsq_sq = np.zeros(n_steps + 1)

    def _sq_diff():
        diff = yb.copy()
        diff[:, :n_a] -= ya
        return np.sum(diff * diff, axis=1)

    sq = _sq_diff()
    sum_sq[0] = np.sum(sq)
    sumsq_sq[0] = np.sum(sq * sq)
    max_sq = sq.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for m in range(n_steps):
            dw = increments[:, m, :]
            _substep_batch(ya, rf_a, model_a, dw, dt, spec_a.k_modes, spec_a.milstein, out_a)
            ya, out_a = out_a, ya
            _substep_batch(yb, rf_b, model_b, dw, dt, spec_b.k_modes, spec_b.milstein, out_b)
            yb, out_b = out_b, yb
            sq = _sq_diff()
            sum_sq[m + 1] = np.sum(sq)
            sumsq_sq[m + 1] = np.sum(sq * sq)
            np.maximum(max_sq, sq, out=max_sq)
    _check_finite((ya, yb), "state")
    return max_sq, sum_sq, sumsq_sq, ya, yb
