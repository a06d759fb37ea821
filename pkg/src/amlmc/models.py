"""Diffusion coefficient interface and the shift-diffusion heat model.

Models supply the nonlinearity of

    dX = (A X + F(X)) dt + G(X) dW

in eigenbasis coordinates.  A model must provide

    drift(y)                       -> F(y) coefficient vector
    apply_diffusion(y, dw, k)      -> sum_k B[n,k](y) dw_k       (linear in dw)
    apply_correction(y, dw, dt, k) -> 0.5 sum_{k,l} D[n,k,l](y) *
                                      (dw_k dw_l - delta_{kl} dt)
    cost_per_step(n, k)            -> declared operation count
    noise_band(n)                  -> largest noise index that can affect an
                                      n-mode state (np.inf if unlimited)
    increment_scale(k)             -> per-mode factor a driver multiplies
                                      into whitened draws before stepping

The sampler always emits whitened (standard Brownian) coordinates;
``increment_scale`` is where a model declares how the covariance spectrum
enters its noise projections.  The reference instance couples mode k into
mode k+1 (a non-commutative band structure): diffusion entry n is
(y_{n-1} + g_n) dw_n and the Milstein correction entry n is
(y_{n-2} + g_{n-1}) dw_n dw_{n-1} / 2, with the convention y_0 = y_{-1} = 0,
acting on increments scaled by sqrt(eta).  Both touch only min(N, K)
entries per step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol, runtime_checkable

import numpy as np

from .spectral import ModeBasis, RationalKind, build_basis, weyl_basis

__all__ = [
    "DiffusionModel",
    "ShiftHeatModel",
    "DenseModel",
    "model_data",
    "Problem",
]


@runtime_checkable
class DiffusionModel(Protocol):
    def drift(self, y: np.ndarray) -> np.ndarray: ...

    def apply_diffusion(self, y: np.ndarray, dw: np.ndarray, k_modes: int) -> np.ndarray: ...

    def apply_correction(
        self, y: np.ndarray, dw: np.ndarray, dt: float, k_modes: int
    ) -> np.ndarray: ...

    def cost_per_step(self, n_modes: int, k_modes: int) -> float: ...

    def noise_band(self, n_modes: int) -> float: ...

    def increment_scale(self, k_modes: int) -> np.ndarray: ...


def _effective_band(y: np.ndarray, dw: np.ndarray, k_modes: int) -> int:
    return min(y.shape[-1], dw.shape[-1], k_modes)


@dataclass(frozen=True)
class ShiftHeatModel:
    """Linear shift-coupled diffusion on the shared eigenbasis; F = 0.

    The banded operations below act on covariance-scaled increment
    coordinates: a whitened draw is multiplied per mode by
    ``increment_scale`` (= sqrt(eta)) before it enters a step, which realizes
    the N(0, eta_k dt) law of the per-mode noise projections.  Path drivers
    perform that scaling once per drawn batch.
    """

    basis: ModeBasis
    g_coeffs: np.ndarray
    x0_coeffs: np.ndarray
    eps: float

    #: marks the banded fast path for the compiled kernel
    banded = True

    def __post_init__(self):
        self.g_coeffs.setflags(write=False)
        self.x0_coeffs.setflags(write=False)

    def increment_scale(self, k_modes: int) -> np.ndarray:
        """Per-mode scaling applied to whitened increments (sqrt of Q spectrum)."""
        return np.sqrt(self.basis.etas[:k_modes])

    def drift(self, y: np.ndarray) -> np.ndarray:
        return np.zeros_like(y)

    def apply_diffusion(self, y: np.ndarray, dw: np.ndarray, k_modes: int) -> np.ndarray:
        kc = _effective_band(y, dw, k_modes)
        out = np.zeros_like(y)
        if kc == 0:
            return out
        prev = np.empty(kc)
        prev[0] = 0.0
        prev[1:] = y[: kc - 1]
        out[:kc] = (prev + self.g_coeffs[:kc]) * dw[:kc]
        return out

    def apply_correction(
        self, y: np.ndarray, dw: np.ndarray, dt: float, k_modes: int
    ) -> np.ndarray:
        # The k = l diagonal of the generic bracket never appears here: the
        # coupling is strictly off-diagonal, so the -dt term drops out.
        kc = _effective_band(y, dw, k_modes)
        out = np.zeros_like(y)
        if kc < 2:
            return out
        prev2 = np.empty(kc - 1)
        prev2[0] = 0.0
        prev2[1:] = y[: kc - 2]
        out[1:kc] = (0.5 * (prev2 + self.g_coeffs[: kc - 1]) * dw[1:kc]) * dw[: kc - 1]
        return out

    def cost_per_step(self, n_modes: int, k_modes: int) -> float:
        return float(n_modes + min(n_modes, k_modes))

    def noise_band(self, n_modes: int) -> float:
        # Mode k of the noise only ever touches state modes k and k+1, so
        # increments beyond the state dimension cannot matter.
        return float(n_modes)


@dataclass(frozen=True)
class DenseModel:
    """Generic dense realization of the diffusion contract.

    ``diffusion_matrix(y)`` returns the whitened (N, K) array B with
    B[n, k] = sqrt(eta_k) * (G(y) e_k, f_n); ``correction_tensor(y)`` the
    whitened (N, K, K) array D with
    D[n, k, l] = sqrt(eta_k eta_l) * (G'(y)(P_N G(y) e_l) e_k, f_n).
    Users with a non-shared eigenbasis perform their own projection when
    building these callables.
    """

    basis: ModeBasis
    diffusion_matrix: Callable[[np.ndarray], np.ndarray]
    correction_tensor: Callable[[np.ndarray], np.ndarray]
    drift_fn: Callable[[np.ndarray], np.ndarray] | None = None

    banded = False

    def drift(self, y: np.ndarray) -> np.ndarray:
        if self.drift_fn is None:
            return np.zeros_like(y)
        return self.drift_fn(y)

    def apply_diffusion(self, y: np.ndarray, dw: np.ndarray, k_modes: int) -> np.ndarray:
        b = self.diffusion_matrix(y)
        kc = min(b.shape[1], dw.shape[-1], k_modes)
        return b[:, :kc] @ dw[:kc]

    def apply_correction(
        self, y: np.ndarray, dw: np.ndarray, dt: float, k_modes: int
    ) -> np.ndarray:
        d = self.correction_tensor(y)
        kc = min(d.shape[1], dw.shape[-1], k_modes)
        w = dw[:kc]
        brackets = np.outer(w, w) - dt * np.eye(kc)
        return 0.5 * np.einsum("nkl,kl->n", d[:, :kc, :kc], brackets)

    def cost_per_step(self, n_modes: int, k_modes: int) -> float:
        return float(n_modes * k_modes + n_modes * k_modes * k_modes)

    def noise_band(self, n_modes: int) -> float:
        return math.inf

    def increment_scale(self, k_modes: int) -> np.ndarray:
        # The dense contract is fully whitened: covariance factors are
        # already explicit in the coefficient arrays.
        return np.ones(k_modes)


def model_data(
    d: int, s: float, eps: float, n_modes: int, spectrum: str = "dirichlet"
) -> ShiftHeatModel:
    """Reference data: g_k = k^(-1/2-eps), x0_k = k^(-1/2-2/d-eps).

    These choices keep G Hilbert-Schmidt and the initial state two degrees
    smoother than H, for any eps > 0.  ``spectrum`` selects the eigenvalue
    normalization: "dirichlet" is the physical pi^2-scaled lattice spectrum
    of the unit cube, "weyl" the unit-constant asymptotic power law (see
    `weyl_basis`).
    """
    if eps <= 0:
        raise ValueError(f"coefficient decay eps must be positive, got {eps}")
    if spectrum == "dirichlet":
        basis = build_basis(d, n_modes, s)
    elif spectrum == "weyl":
        basis = weyl_basis(d, n_modes, s)
    else:
        raise ValueError(f"spectrum must be 'dirichlet' or 'weyl', got {spectrum!r}")
    k = np.arange(1, n_modes + 1, dtype=np.float64)
    g = k ** (-0.5 - eps)
    x0 = k ** (-0.5 - 2.0 / d - eps)
    return ShiftHeatModel(basis=basis, g_coeffs=g, x0_coeffs=x0, eps=float(eps))


@dataclass
class Problem:
    """One experiment setup; caches bases/models per Galerkin dimension.

    ``start`` selects the initial state: "reference" uses the decaying
    coefficient data of `model_data`, "zero" starts from rest (the
    convergence studies measure pure noise response in that mode).
    """

    d: int
    s: float
    eps: float = 0.01
    t_final: float = 1.0
    kind: RationalKind = RationalKind.CRANK_NICOLSON
    milstein: bool = True
    start: str = "reference"
    spectrum: str = "dirichlet"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"spatial dimension must be 1, 2 or 3, got {self.d}")
        if self.start not in ("reference", "zero"):
            raise ValueError(f"start must be 'reference' or 'zero', got {self.start!r}")

    def model(self, n_modes: int) -> ShiftHeatModel:
        if n_modes not in self._cache:
            model = model_data(self.d, self.s, self.eps, n_modes, spectrum=self.spectrum)
            if self.start == "zero":
                model = replace(model, x0_coeffs=np.zeros(n_modes))
            self._cache[n_modes] = model
        return self._cache[n_modes]

    def basis(self, n_modes: int) -> ModeBasis:
        return self.model(n_modes).basis

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_cache"] = {}
        return state
