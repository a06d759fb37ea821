"""Pure-numpy implementation of the banded shift-model sub-step.

This is the import-time fallback for the compiled kernel in ``_kernels``.
Both implementations must perform the same floating-point operations in the
same order per element, so results are bitwise identical; keep any change
mirrored in ``_kernels.pyx``.
"""

from __future__ import annotations

import numpy as np


def shift_substep(
    y: np.ndarray,
    rfac: np.ndarray,
    g: np.ndarray,
    dw: np.ndarray,
    kcap: int,
    milstein: bool,
    out: np.ndarray,
) -> None:
    """One rational time step of the banded shift-diffusion system on a batch.

    For each sample row and 0-based mode index n:

        diff = (y[n-1] or 0 + g[n]) * dw[n]                       if n < kcap
        corr = (0.5*(y[n-2] or 0 + g[n-1]) * dw[n]) * dw[n-1]     if 1 <= n < kcap
        out[n] = rfac[n] * (y[n] + diff + corr)

    Modes at and beyond ``kcap`` receive the propagator only.  ``out`` must
    not alias ``y``.
    """
    n_modes = y.shape[1]
    kc = min(kcap, n_modes, dw.shape[1])
    if kc < n_modes:
        out[:, kc:] = rfac[kc:] * y[:, kc:]
    if kc <= 0:
        return
    prev = np.empty((y.shape[0], kc))
    prev[:, 0] = 0.0
    prev[:, 1:] = y[:, : kc - 1]
    t = y[:, :kc] + (prev + g[:kc]) * dw[:, :kc]
    if milstein and kc >= 2:
        prev2 = prev[:, : kc - 1]  # y shifted by two relative to column n>=1
        t[:, 1:] = t[:, 1:] + (0.5 * (prev2 + g[: kc - 1]) * dw[:, 1:kc]) * dw[:, : kc - 1]
    out[:, :kc] = rfac[:kc] * t
