"""Compare the compiled stencil kernel with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Uses the full-size and scaled scenario grids with their transition stencils.
"""

import argparse
import timeit

import numpy as np

from gridpmbm import kernels
from gridpmbm.config import build_grid_spec, build_motion, build_phi_prior, load_config
from gridpmbm.grid import build_kernel


def bench(name: str, trunc_sigmas: float, repeat: int) -> None:
    cfg = load_config(name)
    spec = build_grid_spec(cfg)
    k = build_kernel(build_motion(cfg), build_phi_prior(cfg), spec, trunc_sigmas)
    src = np.random.default_rng(0).uniform(size=spec.shape)
    ref = kernels.stencil_predict(src, k.offsets, k.values, backend="numpy")
    times = {}
    for b in kernels.available_backends():
        out = kernels.stencil_predict(src, k.offsets, k.values, backend=b)
        assert np.allclose(out, ref, rtol=1e-12, atol=0.0)
        t = timeit.repeat(lambda: kernels.stencil_predict(src, k.offsets, k.values, backend=b), number=1, repeat=repeat)
        times[b] = min(t)
    line = f"{name:16s} {spec.counts[0]}x{spec.counts[1]} stencil {len(k.values):4d}"
    for b, t in times.items():
        line += f"  {b} {t * 1e3:8.3f} ms"
    if len(times) == 2:
        line += f"  speedup {times['numpy'] / times['cython']:.1f}x"
    print(line)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    print(f"default backend: {kernels.BACKEND}")
    for name in ("paper_scenario", "scaled_scenario"):
        for ts in (4.0, 8.0):
            bench(name, ts, args.repeat)


if __name__ == "__main__":
    main()
