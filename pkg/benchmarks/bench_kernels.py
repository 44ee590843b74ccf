"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one ``kernel=... python_ms=... cython_ms=... speedup=...`` line per
kernel, plus a full-render line. Each workload also checks that both
backends agree bit for bit.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from face3dsr.kernels import _fallback
from face3dsr.morphable import generate_basis, pose_mesh
from face3dsr.data import sample_coefficients
from face3dsr.raster import Camera, project

try:
    from face3dsr.kernels import _ckernels
except ImportError:
    _ckernels = None


def workloads():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((8, 64, 16, 16)).astype(np.float32)
    cols = _fallback.im2col(x, 3, 1)
    basis = generate_basis()
    mesh = pose_mesh(basis, sample_coefficients(rng))
    cam = Camera()
    u, v, iz = project(mesh.vertices.data.astype(np.float64), cam)
    screen = np.column_stack([u.data, v.data, iz.data]).astype(np.float64)
    tris = np.ascontiguousarray(basis.triangles)
    return {
        "im2col 8x64x16x16 k3": lambda m: m.im2col(x, 3, 1),
        "col2im 8x64x16x16 k3": lambda m: m.col2im(cols, 64, 16, 16, 3, 1),
        "rasterize face 128x128": lambda m: m.rasterize(screen, tris, cam.height, cam.width),
    }


def best_ms(fn, repeat: int) -> float:
    number = 3
    return 1e3 * min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def render_ms(pure: bool, repeat: int) -> float:
    """End-to-end ``render`` in a fresh interpreter, so the backend switch takes effect."""
    code = ("import timeit, numpy as np; from face3dsr.raster import render; "
            "from face3dsr.morphable import generate_basis; from face3dsr.data import sample_coefficients; "
            "b = generate_basis(); c = sample_coefficients(np.random.default_rng(0)); render(b, c); "
            f"print(1e3 * min(timeit.repeat(lambda: render(b, c), number=3, repeat={repeat})) / 3)")
    env = dict(os.environ, FACE3DSR_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _ckernels is None:
        print("error=compiled kernels not built; run pip install -e . --no-build-isolation", file=sys.stderr)
        sys.exit(1)
    for name, fn in workloads().items():
        same = _same(fn(_fallback), fn(_ckernels))
        py, cy = best_ms(lambda: fn(_fallback), args.repeat), best_ms(lambda: fn(_ckernels), args.repeat)
        print(f"kernel={name.replace(' ', '_')} python_ms={py:.3f} cython_ms={cy:.3f} "
              f"speedup={py / cy:.1f} identical={str(same).lower()}")
    py, cy = render_ms(True, args.repeat), render_ms(False, args.repeat)
    print(f"kernel=render_end_to_end python_ms={py:.3f} cython_ms={cy:.3f} speedup={py / cy:.1f}")


if __name__ == "__main__":
    main()
