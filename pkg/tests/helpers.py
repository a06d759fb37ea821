"""Shared test oracles, kept independent of the library's fast paths."""

import math

import numpy as np

from amlmc.models import DenseModel


def dense_shift_instance(basis, g_coeffs, n_modes, k_modes):
    """Dense generic realization of the banded model, built independently.

    The diffusion operator acts on basis vectors through plain U-inner
    products, G(v) e_k = (v_{k-1} + g_k) e_k, and its derivative through the
    shift part alone; the whitened contract arrays then carry the explicit
    sqrt(eta) covariance factors.  Evaluation is by brute-force loops so the
    banded fast path can be checked against it.
    """
    etas = basis.etas

    def g_apply(v, u):
        out = np.zeros(n_modes)
        for k in range(n_modes):
            if k + 1 < n_modes:
                out[k + 1] += v[k] * u[k + 1]
            out[k] += g_coeffs[k] * u[k]
        return out

    def g_prime_apply(h, u):
        out = np.zeros(n_modes)
        for k in range(n_modes):
            if k + 1 < n_modes:
                out[k + 1] += h[k] * u[k + 1]
        return out

    def diffusion_matrix(y):
        mat = np.zeros((n_modes, k_modes))
        for k in range(k_modes):
            unit = np.zeros(n_modes)
            unit[k] = 1.0
            mat[:, k] = math.sqrt(etas[k]) * g_apply(y, unit)
        return mat

    def correction_tensor(y):
        ten = np.zeros((n_modes, k_modes, k_modes))
        for l in range(k_modes):
            unit_l = np.zeros(n_modes)
            unit_l[l] = 1.0
            h = g_apply(y, unit_l)
            for k in range(k_modes):
                unit_k = np.zeros(n_modes)
                unit_k[k] = 1.0
                ten[:, k, l] = math.sqrt(etas[k] * etas[l]) * g_prime_apply(h, unit_k)
        return ten

    return DenseModel(
        basis=basis, diffusion_matrix=diffusion_matrix, correction_tensor=correction_tensor
    )
