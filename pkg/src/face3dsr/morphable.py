"""Morphable face model: geometry, albedo, pose and spherical-harmonics shading.

Coefficient layout (239 values): identity 80, expression 64, texture 80,
illumination 9, pose 6. Pose is three Euler angles in radians, composed as
intrinsic X-Y-Z (``R = Rx @ Ry @ Rz``), followed by a translation.

Illumination uses the nine real orthonormal SH functions of bands 0-2, in
the order ``Y00, Y1-1 (y), Y10 (z), Y11 (x), Y2-2 (xy), Y2-1 (yz),
Y20 (3z^2-1), Y21 (xz), Y22 (x^2-y^2)``, with one coefficient set shared by
R, G and B.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor

N_ID, N_EXP, N_TEX, N_ILLUM, N_POSE = 80, 64, 80, 9, 6
COEFF_SPLIT = (N_ID, N_EXP, N_TEX, N_ILLUM, N_POSE)
N_COEFFS = sum(COEFF_SPLIT)  # 239

# real SH normalisation constants, bands 0-2
SH_C0 = 1.0 / (2.0 * math.sqrt(math.pi))
SH_C1 = math.sqrt(3.0 / (4.0 * math.pi))
SH_C2 = 0.5 * math.sqrt(15.0 / math.pi)
SH_C3 = 0.25 * math.sqrt(5.0 / math.pi)
SH_C4 = 0.25 * math.sqrt(15.0 / math.pi)

# ambient level giving irradiance 0.9 for the neutral face
NEUTRAL_GAMMA = np.array([0.9 / SH_C0, 0, 0, 0, 0, 0, 0, 0, 0], dtype=np.float32)

stats = {"renormalized_normals": 0}


@dataclass
class FaceBasis:
    mean_shape: np.ndarray  # (3V,)
    mean_texture: np.ndarray  # (3V,)
    id_basis: np.ndarray  # (3V, 80)
    exp_basis: np.ndarray  # (3V, 64)
    tex_basis: np.ndarray  # (3V, 80)
    triangles: np.ndarray  # (T, 3) int

    def __post_init__(self):
        self.mean_shape = np.asarray(self.mean_shape, dtype=np.float32)
        self.mean_texture = np.asarray(self.mean_texture, dtype=np.float32)
        self.id_basis = np.asarray(self.id_basis, dtype=np.float32)
        self.exp_basis = np.asarray(self.exp_basis, dtype=np.float32)
        self.tex_basis = np.asarray(self.tex_basis, dtype=np.float32)
        self.triangles = np.asarray(self.triangles, dtype=np.int32).reshape(-1, 3)
        n = self.mean_shape.size
        if n % 3:
            raise DimensionError(f"mean shape length {n} is not a multiple of 3")
        for name, mat, cols in (
            ("id_basis", self.id_basis, N_ID),
            ("exp_basis", self.exp_basis, N_EXP),
            ("tex_basis", self.tex_basis, N_TEX),
        ):
            if mat.shape != (n, cols):
                raise DimensionError(f"{name} has shape {mat.shape}, expected ({n}, {cols})")
        if self.mean_texture.shape != (n,):
            raise DimensionError(f"mean texture has shape {self.mean_texture.shape}, expected ({n},)")
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= n // 3):
            raise DimensionError("triangle index out of range")

    @property
    def n_vertices(self) -> int:
        return self.mean_shape.size // 3

    def to_tensors(self) -> dict[str, np.ndarray]:
        return {
            "basis.mean_shape": self.mean_shape,
            "basis.mean_texture": self.mean_texture,
            "basis.id": self.id_basis,
            "basis.exp": self.exp_basis,
            "basis.tex": self.tex_basis,
            "basis.triangles": self.triangles,
        }

    @classmethod
    def from_tensors(cls, t) -> "FaceBasis":
        return cls(t["basis.mean_shape"], t["basis.mean_texture"], t["basis.id"], t["basis.exp"],
                   t["basis.tex"], t["basis.triangles"])


@dataclass
class FaceCoefficients:
    alpha: Tensor
    beta: Tensor
    delta: Tensor
    gamma: Tensor
    rho: Tensor

    @classmethod
    def split(cls, x) -> "FaceCoefficients":
        x = T._wrap(x)
        if x.shape != (N_COEFFS,):
            raise DimensionError(f"coefficient vector has shape {x.shape}, expected ({N_COEFFS},)")
        bounds = np.cumsum((0,) + COEFF_SPLIT)
        parts = [T.getitem(x, slice(lo, hi)) for lo, hi in zip(bounds[:-1], bounds[1:])]
        return cls(*parts)

    def concat(self) -> Tensor:
        return T.concat([self.alpha, self.beta, self.delta, self.gamma, self.rho])


def neutral_coefficients() -> np.ndarray:
    x = np.zeros(N_COEFFS, dtype=np.float32)
    x[N_ID + N_EXP + N_TEX : N_ID + N_EXP + N_TEX + N_ILLUM] = NEUTRAL_GAMMA
    return x


@dataclass
class PosedMesh:
    vertices: Tensor  # (V, 3) world space
    colors: Tensor  # (V, 3) shaded, in [0, 1]
    normals: Tensor  # (V, 3) unit
    triangles: np.ndarray


# -- synthetic basis ---------------------------------------------------------

def _half_ellipsoid(rings: int, segments: int, axes):
    a, b, c = axes
    verts = [(0.0, 0.0, c)]
    for r in range(1, rings + 1):
        theta = 0.5 * math.pi * r / rings
        for s in range(segments):
            phi = 2 * math.pi * s / segments
            verts.append((a * math.sin(theta) * math.cos(phi), b * math.sin(theta) * math.sin(phi), c * math.cos(theta)))
    verts = np.array(verts)
    tris = []
    for s in range(segments):
        tris.append((0, 1 + s, 1 + (s + 1) % segments))
    for r in range(rings - 1):
        o0 = 1 + r * segments
        o1 = o0 + segments
        for s in range(segments):
            s1 = (s + 1) % segments
            tris.append((o0 + s, o1 + s, o1 + s1))
            tris.append((o0 + s, o1 + s1, o0 + s1))
    tris = np.array(tris)
    # orient every face outward (gradient of the ellipsoid implicit function)
    p0, p1, p2 = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    fn = np.cross(p1 - p0, p2 - p0)
    centroid = (p0 + p1 + p2) / 3
    outward = centroid / np.array([a * a, b * b, c * c])
    flip = (fn * outward).sum(axis=1) < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return verts, tris


def _smooth_fields(pos: np.ndarray, n_cols: int, rng: np.random.Generator, n_waves: int = 6) -> np.ndarray:
    """Random low-frequency vector fields over vertex positions, one per column."""
    v = pos.shape[0]
    out = np.empty((3 * v, n_cols))
    for j in range(n_cols):
        freq = rng.normal(0.0, 3.0, size=(n_waves, 3))
        phase = rng.uniform(0, 2 * math.pi, size=n_waves)
        amp = rng.normal(size=(n_waves, 3))
        waves = np.sin(pos @ freq.T + phase)  # (V, waves)
        out[:, j] = (waves @ amp).reshape(-1)
    return out


def _orthonormal_columns(m: np.ndarray, norm: float) -> np.ndarray:
    q, r = np.linalg.qr(m)
    q = q * np.sign(np.diag(r))  # unique QR
    return q * norm


def generate_basis(rings: int = 13, segments: int = 37, seed: int = 0,
                   axes=(0.38, 0.5, 0.3)) -> FaceBasis:
    """Deterministic miniature face model on a half-ellipsoid facing +z.

    ``1 + rings * segments`` vertices (482 by default). Basis columns are
    smooth random fields, orthonormalised, each scaled to norm
    ``0.05 * radius`` for geometry and ``0.05 * |mean texture|`` for albedo.
    """
    rng = np.random.default_rng(seed)
    verts, tris = _half_ellipsoid(rings, segments, axes)
    if 3 * verts.shape[0] < N_ID:
        raise ValueError("mesh too small to carry an orthonormal 80-column basis")
    radius = float(np.max(np.linalg.norm(verts - verts.mean(axis=0), axis=1)))

    u = verts[:, 0] / axes[0]
    w = verts[:, 1] / axes[1]
    skin = np.array([0.86, 0.64, 0.52])
    tex = np.tile(skin, (verts.shape[0], 1)) * (1.0 - 0.08 * (u**2 + w**2))[:, None]

    def blob(cx, cy, sx, sy, color, strength=1.0):
        wgt = strength * np.exp(-(((u - cx) / sx) ** 2 + ((w - cy) / sy) ** 2))
        return wgt[:, None] * (np.asarray(color) - tex)

    for ex in (-0.38, 0.38):
        tex += blob(ex, 0.25, 0.17, 0.1, (0.22, 0.16, 0.14))
        tex += blob(ex, 0.48, 0.22, 0.06, (0.35, 0.24, 0.18), 0.8)  # brows
    tex += blob(0.0, -0.48, 0.3, 0.09, (0.62, 0.26, 0.27))
    tex += blob(0.0, -0.05, 0.08, 0.18, (0.78, 0.55, 0.45), 0.5)  # nose ridge
    tex = np.clip(tex, 0.0, 1.0)

    mean_shape = verts.reshape(-1)
    mean_texture = tex.reshape(-1)
    shape_norm = 0.05 * radius
    id_b = _orthonormal_columns(_smooth_fields(verts, N_ID, rng), shape_norm)
    exp_b = _orthonormal_columns(_smooth_fields(verts, N_EXP, rng), shape_norm)
    tex_b = _orthonormal_columns(_smooth_fields(verts, N_TEX, rng), 0.05 * float(np.linalg.norm(mean_texture)))
    return FaceBasis(mean_shape, mean_texture, id_b, exp_b, tex_b, tris)


# -- assembly ----------------------------------------------------------------

def _check_len(x: Tensor, n: int, what: str) -> None:
    if x.shape != (n,):
        raise DimensionError(f"{what} has shape {x.shape}, expected ({n},)")


def assemble_shape(basis: FaceBasis, alpha, beta) -> Tensor:
    """Mean shape plus identity and expression offsets, flat (3V,)."""
    alpha, beta = T._wrap(alpha), T._wrap(beta)
    _check_len(alpha, basis.id_basis.shape[1], "alpha")
    _check_len(beta, basis.exp_basis.shape[1], "beta")
    return Tensor(basis.mean_shape) + T.matmul(Tensor(basis.id_basis), alpha) + T.matmul(Tensor(basis.exp_basis), beta)


def assemble_texture(basis: FaceBasis, delta) -> Tensor:
    """Per-vertex albedo (3V,), clamped to [0, 1] after the affine combination."""
    delta = T._wrap(delta)
    _check_len(delta, basis.tex_basis.shape[1], "delta")
    raw = Tensor(basis.mean_texture) + T.matmul(Tensor(basis.tex_basis), delta)
    return T.clamp(raw, 0.0, 1.0)


def euler_rotation(angles) -> Tensor:
    """3x3 rotation ``Rx(a) @ Ry(b) @ Rz(c)`` from angles ``(a, b, c)``."""
    angles = T._wrap(angles)
    _check_len(angles, 3, "euler angles")
    c = T.cos(angles)
    s = T.sin(angles)
    ca, cb, cc = c[0], c[1], c[2]
    sa, sb, sc = s[0], s[1], s[2]
    entries = [
        cb * cc, -(cb * sc), sb,
        ca * sc + sa * sb * cc, ca * cc - sa * sb * sc, -(sa * cb),
        sa * sc - ca * sb * cc, sa * cc + ca * sb * sc, ca * cb,
    ]
    return T.reshape(T.stack(entries), (3, 3))


def pose_transform(vertices, rho) -> Tensor:
    """Rigidly move vertices ((3V,) or (V, 3)) by pose ``rho``; returns (V, 3)."""
    vertices, rho = T._wrap(vertices), T._wrap(rho)
    _check_len(rho, N_POSE, "rho")
    v = T.reshape(vertices, (-1, 3))
    rot = euler_rotation(T.getitem(rho, slice(0, 3)))
    trans = T.reshape(T.getitem(rho, slice(3, 6)), (1, 3))
    return T.matmul(v, T.transpose(rot)) + trans


def _cross(a: Tensor, b: Tensor) -> Tensor:
    ax, ay, az = a[:, 0], a[:, 1], a[:, 2]
    bx, by, bz = b[:, 0], b[:, 1], b[:, 2]
    return T.stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=1)


def vertex_normals(vertices, triangles: np.ndarray) -> Tensor:
    """Unit normals: area-weighted average of adjacent face normals."""
    v = T.reshape(T._wrap(vertices), (-1, 3))
    tris = np.asarray(triangles)
    p0, p1, p2 = (T.take(v, tris[:, k]) for k in range(3))
    face_n = _cross(p1 - p0, p2 - p0)  # length = 2 * area
    n_vert = v.shape[0]
    acc = T.scatter_add(T.concat([face_n, face_n, face_n]), np.concatenate([tris[:, 0], tris[:, 1], tris[:, 2]]), n_vert)
    return acc / T.norm(acc, axis=1, keepdims=True)


def sh_basis(normals) -> Tensor:
    """(..., 3) unit normals -> (..., 9) SH basis values."""
    n = T._wrap(normals)
    single = n.ndim == 1
    if single:
        n = T.reshape(n, (1, 3))
    x, y, z = n[:, 0], n[:, 1], n[:, 2]
    ones = Tensor(np.full(x.shape, SH_C0))
    cols = [
        ones,
        y * SH_C1,
        z * SH_C1,
        x * SH_C1,
        x * y * SH_C2,
        y * z * SH_C2,
        (z * z * 3.0 - 1.0) * SH_C3,
        x * z * SH_C2,
        (x * x - y * y) * SH_C4,
    ]
    out = T.stack(cols, axis=1)
    return T.reshape(out, (9,)) if single else out


def _ensure_unit(normals: Tensor, tol: float = 1e-3) -> Tensor:
    lengths = np.linalg.norm(normals.data.reshape(-1, 3), axis=1)
    off = np.abs(lengths - 1.0) > tol
    if not off.any():
        return normals
    stats["renormalized_normals"] += int(off.sum())
    if normals.ndim == 1:
        return normals / T.norm(normals)
    return normals / T.norm(normals, axis=1, keepdims=True)


def sh_irradiance(normals, gamma) -> Tensor:
    """Irradiance ``sum_b gamma_b * Y_b(n)`` for one normal (3,) or many (V, 3)."""
    normals, gamma = _ensure_unit(T._wrap(normals)), T._wrap(gamma)
    _check_len(gamma, N_ILLUM, "gamma")
    basis = sh_basis(normals)
    if basis.ndim == 1:
        return T.tsum(basis * gamma)
    return T.matmul(basis, gamma)


def shade(albedo, normals, gamma) -> Tensor:
    """Lambertian colour ``albedo * max(irradiance, 0)``, clipped to 1. Shapes (V, 3)."""
    albedo = T.reshape(T._wrap(albedo), (-1, 3))
    irr = T.relu(sh_irradiance(normals, gamma))
    return T.clamp(albedo * T.reshape(irr, (-1, 1)), None, 1.0)


def pose_mesh(basis: FaceBasis, coeffs) -> PosedMesh:
    """Coefficients (239,) -> posed, shaded mesh."""
    cf = coeffs if isinstance(coeffs, FaceCoefficients) else FaceCoefficients.split(coeffs)
    shape = assemble_shape(basis, cf.alpha, cf.beta)
    world = pose_transform(shape, cf.rho)
    normals = vertex_normals(world, basis.triangles)
    albedo = assemble_texture(basis, cf.delta)
    colors = shade(albedo, normals, cf.gamma)
    return PosedMesh(world, colors, normals, basis.triangles)
