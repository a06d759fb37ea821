"""Compare the compiled sub-step kernel against the pure-numpy fallback.

Times the banded sub-step on batch shapes representative of the coupled
variance sweeps, plus one end-to-end coupled pass, and checks bitwise
agreement along the way.  Run directly:

    python benchmarks/bench_backends.py
"""

import time

import numpy as np

from amlmc import Problem, backend
from amlmc._kernels_np import shift_substep as numpy_substep
from amlmc.noise import StreamKey, derive_stream, draw_block_array
from amlmc.stepping import CoupledParams, run_coupled_batch

try:
    from amlmc import _kernels

    ext_substep = _kernels.shift_substep
except ImportError:
    ext_substep = None


def time_substep(fn, y, rfac, g, dw, repeats=200):
    out = np.empty_like(y)
    fn(y, rfac, g, dw, y.shape[1], True, out)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(y, rfac, g, dw, y.shape[1], True, out)
    return (time.perf_counter() - t0) / repeats, out


def bench_substep():
    print("banded sub-step, milstein, kcap = N")
    print(f"{'batch':>6} {'modes':>6} {'numpy':>12} {'ext':>12} {'speedup':>8}")
    rng = np.random.default_rng(0)
    for b, n in ((64, 8), (256, 16), (1024, 23), (1024, 64), (4096, 128)):
        y = rng.standard_normal((b, n))
        g = rng.standard_normal(n)
        rfac = rng.uniform(-1, 1, n)
        dw = rng.standard_normal((b, n))
        t_np, out_np = time_substep(numpy_substep, y, rfac, g, dw)
        if ext_substep is None:
            print(f"{b:>6} {n:>6} {t_np * 1e6:>10.1f}us {'-':>12} {'-':>8}")
            continue
        t_ext, out_ext = time_substep(ext_substep, y, rfac, g, dw)
        assert np.array_equal(out_np, out_ext), "backends disagree"
        print(
            f"{b:>6} {n:>6} {t_np * 1e6:>10.1f}us {t_ext * 1e6:>10.1f}us "
            f"{t_np / t_ext:>7.1f}x"
        )


def bench_coupled_pass():
    print("\nend-to-end coupled batch (d=1, s=0.75, M=128, N=K=12, 512 samples)")
    problem = Problem(d=1, s=0.75, start="zero")
    params = CoupledParams(1.0, 128, 12, 12, 12, 12)
    blocks = np.stack(
        [
            draw_block_array(derive_stream(StreamKey(0, 0, i)), 128, 12, params.dt)
            for i in range(512)
        ]
    )
    import amlmc.stepping as stepping

    results = {}
    for name, fn in (("numpy", numpy_substep), ("ext", ext_substep)):
        if fn is None:
            continue
        original = stepping.backend.shift_substep
        stepping.backend.shift_substep = fn
        try:
            run_coupled_batch(params, problem.model, blocks.copy())  # warm up
            t0 = time.perf_counter()
            res = run_coupled_batch(params, problem.model, blocks.copy())
            results[name] = (time.perf_counter() - t0, res.y_fine)
        finally:
            stepping.backend.shift_substep = original
    for name, (elapsed, _) in results.items():
        print(f"  {name:>6}: {elapsed * 1e3:8.1f} ms")
    if len(results) == 2:
        assert np.array_equal(results["numpy"][1], results["ext"][1])
        print(f"  speedup: {results['numpy'][0] / results['ext'][0]:.1f}x, outputs bitwise equal")


if __name__ == "__main__":
    print(f"active backend: {backend.BACKEND}")
    bench_substep()
    bench_coupled_pass()
