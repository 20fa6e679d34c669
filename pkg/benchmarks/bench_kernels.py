"""Compiled vs NumPy kernels: block matching, bilinear warp and one full restore.

Usage: python benchmarks/bench_kernels.py [--size HxW] [--repeat N]
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from bursthdr import kernels


def _best(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def _bm_inputs(h: int, w: int, block: int = 16, radius: int = 4):
    rng = np.random.default_rng(0)
    ref = rng.random((h, w))
    tgt = np.roll(ref, (2, -3), axis=(0, 1))
    ones = np.ones((h, w))
    ys, xs = np.arange(0, h, block), np.arange(0, w, block)
    ty0, tx0 = np.meshgrid(ys, xs, indexing="ij")
    tys = np.minimum(block, h - ty0)
    txs = np.minimum(block, w - tx0)
    zeros = np.zeros(ty0.size, dtype=np.int64)
    return (ref, tgt, ones, ones, ty0.ravel(), tx0.ravel(), tys.ravel(), txs.ravel(),
            zeros, zeros, radius)


def _warp_inputs(h: int, w: int):
    rng = np.random.default_rng(1)
    planes = rng.random((4, h, w))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    fx = 1.3 + 0.01 * np.sin(yy / 7.0)
    fy = -0.7 + 0.01 * np.cos(xx / 5.0)
    return planes, fx, fy, np.ones((4, h, w))


def bench_kernels(h: int, w: int, repeat: int) -> list[tuple[str, float, float]]:
    bm = _bm_inputs(h, w)
    wp = _warp_inputs(h, w)
    rows = []
    for name, fn, args in (("block_match", kernels.block_match, bm),
                           ("warp_bilinear", kernels.warp_bilinear, wp)):
        t_py = _best(lambda: fn(*args, backend="python"), repeat)
        t_cy = _best(lambda: fn(*args, backend="cython"), repeat) if kernels.have_compiled() else float("nan")
        rows.append((name, t_cy, t_py))
    return rows


def _restore_seconds(pure: bool, size: str, repeat: int) -> float:
    """Time one restore in a subprocess so the backend is chosen at import."""
    code = (
        "import time, sys\n"
        "from bursthdr.rawisp import restore_scene\n"
        "from bursthdr.synthforge import procedural_hdr, random_scene_spec, synth_scene\n"
        f"h, w = {size}\n"
        "sc = synth_scene(procedural_hdr(0, w, h), random_scene_spec(0))\n"
        "best = float('inf')\n"
        f"for _ in range({repeat}):\n"
        "    t = time.perf_counter(); restore_scene(sc); best = min(best, time.perf_counter() - t)\n"
        "print(best)\n"
    )
    env = dict(os.environ, BURSTHDR_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", code], env=env, check=True,
                         capture_output=True, text=True)
    return float(out.stdout.strip())


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", default="384x768", help="packed-plane HxW for the kernels")
    ap.add_argument("--restore-size", default="192x384", help="full-resolution HxW for restore")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    h, w = (int(v) for v in args.size.split("x"))
    rh, rw = (int(v) for v in args.restore_size.split("x"))

    print(f"compiled kernels available: {kernels.have_compiled()}")
    print(f"{'kernel':<16} {'cython (s)':>11} {'python (s)':>11} {'speedup':>8}")
    for name, t_cy, t_py in bench_kernels(h, w, args.repeat):
        print(f"{name:<16} {t_cy:11.4f} {t_py:11.4f} {t_py / t_cy:7.1f}x")
    if kernels.have_compiled():
        t_cy = _restore_seconds(False, (rh, rw), args.repeat)
    else:
        t_cy = float("nan")
    t_py = _restore_seconds(True, (rh, rw), args.repeat)
    print(f"{'restore ' + args.restore_size:<16} {t_cy:11.4f} {t_py:11.4f} {t_py / t_cy:7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
