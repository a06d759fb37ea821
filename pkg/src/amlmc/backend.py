"""Selects the compiled sub-step kernel, falling back to pure numpy.

Set ``AMLMC_BACKEND=numpy`` (or ``ext``) to force a choice; by default the
compiled extension is used when the build produced it.  Both backends are
bitwise-identical by construction (see ``_kernels_np``), so the choice only
affects speed.
"""

from __future__ import annotations

import os

from . import _kernels_np

_requested = os.environ.get("AMLMC_BACKEND", "").strip().lower()

_ext = None
if _requested != "numpy":
    try:
        from . import _kernels as _ext  # type: ignore[attr-defined]
    except ImportError:
        _ext = None
        if _requested == "ext":
            raise ImportError(
                "AMLMC_BACKEND=ext requested but the compiled kernel is not available; "
                "reinstall with a C compiler or unset AMLMC_BACKEND"
            )

if _ext is not None:
    BACKEND = "ext"
    shift_substep = _ext.shift_substep
else:
    BACKEND = "numpy"
    shift_substep = _kernels_np.shift_substep

numpy_shift_substep = _kernels_np.shift_substep
