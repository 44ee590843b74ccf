"""The finite-difference gradient suite run by ``face3dsr gradcheck``.

Every differentiable building block gets a case: a factory that draws random
inputs from a seeded generator and returns ``(fn, inputs)`` for
:func:`face3dsr.gradcheck.check_over_seeds`. Module-based cases bind the
float64 input tensors onto a freshly built module before calling it.
"""
from __future__ import annotations

import functools
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import functional as F
from . import tensor as T
from .gradcheck import check_over_seeds
from .morphable import generate_basis, neutral_coefficients, pose_mesh, shade, vertex_normals
from .networks import RCAB, SAMNet, SamConfig, SFTCondition, sft_modulate
from .priors import rendering_loss
from .raster import Camera, render

TOL = 1e-4
NETWORK_TOL = 1e-3
# a 24x24 view of the face keeps render probes cheap and visibility stable
SMALL_CAMERA = Camera(focal=1015.0 * 24 / 128, cx=12.0, cy=12.0, width=24, height=24)


@dataclass(frozen=True)
class Case:
    name: str
    make: Callable
    tol: float = TOL
    h: float = 1e-5
    max_entries: int | None = None


@dataclass
class CaseResult:
    name: str
    max_rel_error: float
    tol: float
    seeds: int
    rejected: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def _bind(module, names, tensors):
    for name, t in zip(names, tensors):
        *path, attr = name.split(".")
        obj = module
        for p in path:
            obj = obj[int(p)] if isinstance(obj, list) else getattr(obj, p)
        setattr(obj, attr, t)


def _module_case(module, extra_inputs, call, rng, scale=0.5):
    names = list(module.named_parameters())
    params = [rng.uniform(-scale, scale, module.named_parameters()[n].shape) for n in names]
    k = len(extra_inputs)

    def fn(*ts):
        _bind(module, names, ts[k:])
        return call(*ts[:k])

    return fn, list(extra_inputs) + params


def _unary(op, lo=-2.0, hi=2.0, shape=(3, 4)):
    def make(rng):
        return op, [rng.uniform(lo, hi, shape)]
    return make


def _binary(op, shape_a=(3, 4), shape_b=(3, 4), positive_b=False):
    def make(rng):
        b = rng.uniform(0.5, 2.0, shape_b) if positive_b else rng.uniform(-2, 2, shape_b)
        return op, [rng.uniform(-2, 2, shape_a), b]
    return make


def _conv(rng):
    stride = int(rng.choice([1, 2]))
    size = 5 if stride == 1 else 7
    x = rng.standard_normal((2, 2, size, size))
    w = rng.standard_normal((3, 2, 3, 3)) * 0.5
    b = rng.standard_normal(3)
    return (lambda x, w, b: F.conv2d(x, w, b, stride=stride, pad=1)), [x, w, b]


def _tconv(rng):
    x = rng.standard_normal((2, 2, 3, 3))
    w = rng.standard_normal((2, 3, 4, 4)) * 0.5
    b = rng.standard_normal(3)
    return (lambda x, w, b: F.transposed_conv2d(x, w, b, stride=2, pad=1)), [x, w, b]


def _linear(rng):
    return F.linear, [rng.standard_normal((2, 5)), rng.standard_normal((3, 5)), rng.standard_normal(3)]


def _pools(rng):
    x = rng.standard_normal((1, 2, 4, 4))

    def fn(x):
        pooled = T.reshape(F.avg_pool2d(F.upsample_nearest(x, 2), 4), (-1,))
        return T.concat([pooled, T.reshape(F.global_avg_pool(x), (-1,))])

    return fn, [x]


def _structural(rng):
    x = rng.standard_normal((4, 3))
    idx = rng.integers(0, 4, 6)

    def fn(x):
        gathered = T.take(x, idx)
        scattered = T.scatter_add(gathered, rng_idx, 5)
        y = T.concat([T.transpose(x), T.reshape(x, (3, 4))], axis=1)
        return T.tsum(scattered, axis=0) + T.mean(y, axis=1) + T.stack([x[0], x[1]], axis=0)[1]

    rng_idx = rng.integers(0, 5, 6)
    return fn, [x]


def _matmul(rng):
    return T.matmul, [rng.standard_normal((3, 4)), rng.standard_normal((4, 2))]


def _rcab(rng):
    block = RCAB(4, 2)
    x = rng.standard_normal((1, 4, 6, 6))
    return _module_case(block, [x], block, rng)


def _sft(rng):
    cond = SFTCondition(7, 4)
    feat = rng.standard_normal((1, 4, 5, 5))
    prior = rng.uniform(0, 1, (1, 7, 5, 5))

    def call(f, p):
        mu, nu = cond(p)
        return sft_modulate(f, mu, nu)

    return _module_case(cond, [feat, prior], call, rng)


@functools.lru_cache(maxsize=1)
def _basis():
    return generate_basis()


def _coeffs(rng) -> np.ndarray:
    x = neutral_coefficients().astype(np.float64)
    x[:80] = rng.normal(0, 2.0, 80)
    x[80:144] = rng.normal(0, 2.0, 64)
    x[144:224] = rng.normal(0, 0.1, 80)
    x[225:233] += rng.normal(0, 0.1, 8)
    x[233:236] = rng.normal(0, 0.1, 3)
    return x


def _shading(rng):
    basis = _basis()
    verts = basis.mean_shape.reshape(-1, 3).astype(np.float64)
    sel = np.arange(0, 60)
    tris = basis.triangles[np.all(np.isin(basis.triangles, sel), axis=1)]
    v = verts[sel] + rng.normal(0, 0.005, (sel.size, 3))
    albedo = rng.uniform(0.2, 0.6, (sel.size, 3))
    gamma = neutral_coefficients()[224:233].astype(np.float64) + rng.normal(0, 0.1, 9)
    return (lambda v, a, g: shade(a, vertex_normals(v, tris), g)), [v, albedo, gamma]


def _render(rng):
    basis = _basis()
    return (lambda c: render(basis, c, SMALL_CAMERA).image), [_coeffs(rng)]


def _loss(rng):
    shape = (2, 6, 6)
    sharp = rng.uniform(0, 1, shape + (3,))
    att = rng.uniform(0.1, 1.0, shape)
    mask = rng.uniform(size=shape) < 0.7
    mask[:, 0, 0] = True
    return (lambda r: rendering_loss(sharp, r, att, mask)), [rng.uniform(0, 1, shape + (3,))]


def _micro_sam(rng):
    net = SAMNet(SamConfig(channels=8, rcab_count=2, reduction=2, scale=8))
    lr = rng.uniform(0, 1, (1, 3, 16, 16))
    prior = rng.uniform(0, 1, (1, 7, 16, 16))
    return _module_case(net, [lr, prior], lambda x, p: net(x, p, train=True), rng, scale=0.3)


def _pose_mesh(rng):
    basis = _basis()
    return (lambda c: pose_mesh(basis, c).colors), [_coeffs(rng)]


CASES: tuple[Case, ...] = (
    Case("conv2d", _conv),
    Case("transposed_conv2d", _tconv),
    Case("linear", _linear),
    Case("pooling", _pools),
    Case("add", _binary(T.add, (3, 4), (1, 4))),
    Case("sub", _binary(T.sub, (3, 4), (3, 1))),
    Case("mul", _binary(T.mul)),
    Case("div", _binary(T.div, positive_b=True)),
    Case("power", _unary(lambda a: T.power(a, 3.0))),
    Case("sqrt", _unary(T.sqrt, 0.5, 3.0)),
    Case("exp", _unary(T.exp)),
    Case("sin", _unary(T.sin)),
    Case("cos", _unary(T.cos)),
    Case("relu", _unary(T.relu)),
    Case("sigmoid", _unary(T.sigmoid)),
    Case("clamp", _unary(lambda a: T.clamp(a, -0.5, 0.8))),
    Case("abs", _unary(T.absolute)),
    Case("norm", _unary(lambda a: T.norm(a, axis=1))),
    Case("structural", _structural),
    Case("matmul", _matmul),
    Case("rcab", _rcab),
    Case("sft", _sft),
    Case("shading", _shading, h=1e-6),
    Case("pose_mesh", _pose_mesh, h=1e-5, max_entries=40),
    Case("render", _render, h=1e-6, max_entries=40),
    Case("rendering_loss", _loss),
    Case("sam_micro", _micro_sam, tol=NETWORK_TOL, h=1e-6, max_entries=2),
)


def run_suite(n_seeds: int = 20, names=None, progress: Callable[[CaseResult], None] | None = None) -> list[CaseResult]:
    results = []
    for case in CASES:
        if names and case.name not in names:
            continue
        t0 = time.perf_counter()
        worst, checked, rejected = check_over_seeds(case.make, n_seeds=n_seeds, h=case.h,
                                                    max_entries=case.max_entries)
        res = CaseResult(case.name, worst, case.tol, checked, rejected, time.perf_counter() - t0)
        results.append(res)
        if progress:
            progress(res)
    return results
