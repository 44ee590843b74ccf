import os
import subprocess
import sys

import numpy as np
import pytest

from face3dsr import kernels
from face3dsr.kernels import _fallback

needs_ext = pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernels not built")


def _ext():
    from face3dsr.kernels import _ckernels
    return _ckernels


@needs_ext
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("k,stride", [(3, 1), (3, 2), (1, 1), (4, 2)])
def test_im2col_col2im_bit_identical(dtype, k, stride):
    rng = np.random.default_rng(k * 10 + stride)
    h = 9 if (9 - k) % stride == 0 else 10
    x = rng.standard_normal((2, 3, h, h)).astype(dtype)
    a, b = _ext().im2col(x, k, stride), _fallback.im2col(x, k, stride)
    assert a.dtype == b.dtype and np.array_equal(a, b)
    cols = rng.standard_normal(a.shape).astype(dtype)
    a, b = _ext().col2im(cols, 3, h, h, k, stride), _fallback.col2im(cols, 3, h, h, k, stride)
    assert np.array_equal(a, b)


def random_scene(rng, n_tris=40, size=32):
    v = np.column_stack([rng.uniform(-4, size + 4, 3 * n_tris), rng.uniform(-4, size + 4, 3 * n_tris),
                         rng.uniform(0.05, 1.0, 3 * n_tris)])
    v[rng.integers(0, len(v), 3), 2] = -1.0  # a few vertices behind the camera
    tris = np.arange(3 * n_tris).reshape(-1, 3)
    tris[0] = [0, 0, 1]  # degenerate
    return v, tris


@needs_ext
@pytest.mark.parametrize("seed", range(5))
def test_rasterize_backends_bit_identical(seed):
    v, tris = random_scene(np.random.default_rng(seed))
    a = _ext().rasterize(v, tris, 32, 32)
    b = _fallback.rasterize(v, tris, 32, 32)
    for x, y in zip(a[:3], b[:3]):
        assert np.array_equal(x, y)
    assert tuple(a[3]) == tuple(b[3])


@needs_ext
def test_rasterize_rejects_nonfinite_and_huge_coordinates():
    v = np.array([[1e300, 0, 1], [5, 5, 1], [0, 5, 1], [np.nan, 1, 1], [2, 2, 1], [3, 1, 1]], dtype=np.float64)
    tris = np.array([[0, 1, 2], [3, 4, 5]])
    a = _ext().rasterize(v, tris, 8, 8)
    b = _fallback.rasterize(v, tris, 8, 8)
    assert np.array_equal(a[0], b[0]) and tuple(a[3]) == tuple(b[3])


def test_pure_python_switch_selects_fallback():
    env = dict(os.environ, FACE3DSR_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from face3dsr import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_render_identical_across_backends(basis):
    """A full render through either backend yields the same bytes."""
    code = (
        "import numpy as np, sys; from face3dsr.raster import render; from face3dsr.morphable import generate_basis;"
        "from face3dsr.data import sample_coefficients;"
        "o = render(generate_basis(), sample_coefficients(np.random.default_rng(3)));"
        "sys.stdout.buffer.write(o.rgb.tobytes() + o.tri_id.tobytes())"
    )
    outs = []
    for flag in ("0", "1"):
        env = dict(os.environ, FACE3DSR_PURE_PYTHON=flag)
        outs.append(subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, check=True).stdout)
    assert outs[0] == outs[1] and len(outs[0]) > 0
