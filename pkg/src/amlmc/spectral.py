"""Dirichlet-Laplacian eigenbasis on [0,1]^d and rational semigroup propagators.

The negative Laplacian with zero Dirichlet conditions on the unit cube has
eigenfunctions indexed by multi-indices k in N^d with eigenvalues
pi^2 * (k_1^2 + ... + k_d^2).  The noise covariance shares this eigenbasis
with eigenvalues eta_n = lambda_n^{-s}, which is trace class iff s > d/2.

All solution states are represented by their coefficient vector in this
eigenbasis (plain float64 ndarrays); helpers here provide the fractional
Sobolev norms and the one-step rational propagators r(dt * lambda_n).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "RationalKind",
    "ModeBasis",
    "build_basis",
    "weyl_basis",
    "rational_eval",
    "rational_factors",
    "propagate",
    "sobolev_norm",
]


class RationalKind(Enum):
    """Single-step approximations of exp(-x), all bounded by 1 on x >= 0."""

    CRANK_NICOLSON = "crank-nicolson"
    BACKWARD_EULER = "backward-euler"
    EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class ModeBasis:
    """Sorted eigensystem of the Dirichlet Laplacian and of the covariance.

    ``lambdas`` is non-decreasing with ties broken by lexicographic order of
    the multi-indices; ``etas = lambdas**(-s)`` is non-increasing and
    positive.  Immutable and safe to share across workers.
    """

    d: int
    modes: np.ndarray  # (n_modes, d) int64, 1-based multi-indices
    lambdas: np.ndarray  # (n_modes,) float64
    etas: np.ndarray  # (n_modes,) float64
    s: float

    def __post_init__(self):
        self.modes.setflags(write=False)
        self.lambdas.setflags(write=False)
        self.etas.setflags(write=False)

    def __len__(self) -> int:
        return self.lambdas.shape[0]


def build_basis(d: int, count: int, s: float) -> ModeBasis:
    """Return the `count` smallest Dirichlet-Laplacian eigenpairs on [0,1]^d.

    Raises ValueError for d outside {1,2,3}, count < 1, or s <= d/2 (the
    covariance would not be trace class).
    """
    if d not in (1, 2, 3):
        raise ValueError(f"spatial dimension must be 1, 2 or 3, got {d}")
    if count < 1:
        raise ValueError(f"mode count must be >= 1, got {count}")
    if s <= d / 2:
        raise ValueError(
            f"smoothness s={s} is not admissible: trace-class covariance needs s > d/2 = {d / 2}"
        )

    if d == 1:
        ks = np.arange(1, count + 1, dtype=np.int64)[:, None]
        sq = (ks[:, 0] ** 2).astype(np.float64)
    else:
        # Enumerate a box [1..side]^d large enough that every mode outside it
        # has |k|^2 strictly above the cutoff kept from inside the box.
        side = max(2, math.ceil(count ** (1.0 / d)) + 1)
        while True:
            axes = [np.arange(1, side + 1, dtype=np.int64)] * d
            grid = np.meshgrid(*axes, indexing="ij")
            ks = np.stack([g.ravel() for g in grid], axis=1)
            sq_all = (ks**2).sum(axis=1)
            cutoff = (side + 1) ** 2 + (d - 1) - 1
            keep = sq_all <= cutoff
            if int(keep.sum()) >= count:
                ks = ks[keep]
                sq_all = sq_all[keep]
                break
            side *= 2
        # Sort by eigenvalue, ties by lexicographic multi-index order.
        order = np.lexsort(tuple(ks[:, i] for i in reversed(range(d))) + (sq_all,))
        ks = ks[order][:count]
        sq = (ks**2).sum(axis=1).astype(np.float64)

    lambdas = (math.pi**2) * sq
    etas = lambdas ** (-s)
    return ModeBasis(d=d, modes=ks, lambdas=lambdas, etas=etas, s=float(s))


def weyl_basis(d: int, count: int, s: float) -> ModeBasis:
    """Unit-normalized asymptotic spectrum lambda_j = j^(2/d), single index.

    Counting the Dirichlet eigenvalues in increasing order gives
    lambda_j ~ j^(2/d) up to a constant; this basis adopts that power law
    with unit constant as the definition, which decouples the convergence
    exponents from the physical spectral gap.  Mode j is recorded as the
    one-column index [j].
    """
    if d not in (1, 2, 3):
        raise ValueError(f"spatial dimension must be 1, 2 or 3, got {d}")
    if count < 1:
        raise ValueError(f"mode count must be >= 1, got {count}")
    if s <= d / 2:
        raise ValueError(
            f"smoothness s={s} is not admissible: trace-class covariance needs s > d/2 = {d / 2}"
        )
    j = np.arange(1, count + 1, dtype=np.int64)
    lambdas = j.astype(np.float64) ** (2.0 / d)
    return ModeBasis(d=d, modes=j[:, None], lambdas=lambdas, etas=lambdas ** (-s), s=float(s))


def rational_eval(kind: RationalKind, x):
    """Evaluate the stability function r(x) for x >= 0 (scalar or array)."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("rational approximations are only defined for x >= 0")
    if kind is RationalKind.CRANK_NICOLSON:
        out = (1.0 - 0.5 * x) / (1.0 + 0.5 * x)
    elif kind is RationalKind.BACKWARD_EULER:
        out = 1.0 / (1.0 + x)
    elif kind is RationalKind.EXPONENTIAL:
        out = np.exp(-x)
    else:  # pragma: no cover - enum is exhaustive
        raise ValueError(f"unknown rational kind {kind!r}")
    return out if out.ndim else float(out)


def rational_factors(kind: RationalKind, dt: float, lambdas: np.ndarray) -> np.ndarray:
    """Per-mode propagator coefficients r(dt * lambda_n)."""
    if dt <= 0:
        raise ValueError(f"time step must be positive, got {dt}")
    return rational_eval(kind, dt * lambdas)


def propagate(
    basis: ModeBasis, kind: RationalKind, dt: float, coeffs: np.ndarray
) -> np.ndarray:
    """Apply one deterministic semigroup step to a coefficient vector.

    Multiplies coefficient n by r(dt * lambda_n); never increases the H norm.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    n = coeffs.shape[-1]
    if n > len(basis):
        raise ValueError(f"state has {n} coefficients but basis only {len(basis)} modes")
    return rational_factors(kind, dt, basis.lambdas[:n]) * coeffs


def sobolev_norm(coeffs: np.ndarray, basis: ModeBasis, a: float = 0.0) -> float:
    """Fractional norm sqrt(sum lambda_n^a * y_n^2); a=0 gives the H norm."""
    if a < 0:
        raise ValueError(f"Sobolev exponent must be >= 0, got {a}")
    coeffs = np.asarray(coeffs, dtype=np.float64)
    n = coeffs.shape[-1]
    if n > len(basis):
        raise ValueError(f"state has {n} coefficients but basis only {len(basis)} modes")
    if a == 0.0:
        return float(np.sqrt(np.sum(coeffs * coeffs)))
    return float(np.sqrt(np.sum(basis.lambdas[:n] ** a * coeffs * coeffs)))
