"""Pinhole projection and z-buffered rasterization of posed face meshes.

The camera sits at ``(0, 0, distance)`` looking down -z with world +y up;
image rows grow downward. Pixel centres are at half-integer coordinates and
edge ownership follows the top-left rule. Attributes are interpolated with
screen-space barycentric weights; the z-test compares interpolated inverse
depth, nearest wins, and on exact ties the lower triangle index wins.

For :func:`render`, visibility (which triangle covers a pixel) is computed
once and held fixed; gradients flow through the shading and through the
barycentric weights, which depend on the projected vertex positions.
Triangles with a vertex at or behind the camera plane are dropped, not clipped.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from . import tensor as T
from .morphable import FaceBasis, PosedMesh, pose_mesh
from .tensor import Tensor

BACKGROUND = 0.0


@dataclass(frozen=True)
class Camera:
    focal: float = 1015.0
    cx: float = 64.0
    cy: float = 64.0
    width: int = 128
    height: int = 128
    distance: float = 10.0

    def __post_init__(self):
        if self.focal <= 0:
            raise ValueError(f"focal length must be positive, got {self.focal}")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) lies outside the image")


@dataclass
class RenderOutput:
    rgb: np.ndarray  # (H, W, 3) float32 in [0, 1]
    face_mask: np.ndarray  # (H, W) bool
    depth: np.ndarray  # (H, W) float32, inf outside the mask
    tri_id: np.ndarray  # (H, W) int32, -1 outside the mask
    bary: np.ndarray  # (H, W, 3) float64
    degenerate: int = 0
    behind: int = 0
    image: Tensor | None = field(default=None, repr=False)  # differentiable rgb, (H, W, 3)


def project(vertices, camera: Camera) -> tuple[Tensor, Tensor, Tensor]:
    """World (V, 3) -> pixel x, pixel y, inverse depth."""
    v = T._wrap(vertices)
    x, y, z = v[:, 0], v[:, 1], v[:, 2]
    inv_depth = 1.0 / (camera.distance - z)
    u = x * inv_depth * camera.focal + camera.cx
    w = camera.cy - y * inv_depth * camera.focal
    return u, w, inv_depth


def _fragments(u: np.ndarray, v: np.ndarray, iz: np.ndarray, triangles, camera: Camera):
    screen = np.stack([u, v, iz], axis=1).astype(np.float64)
    # a vertex behind the camera plane has negative depth; mark it invalid for the kernel
    screen[:, 2] = np.where(iz > 0, iz, -1.0)
    return kernels.rasterize(screen, np.asarray(triangles, dtype=np.int64), camera.height, camera.width)


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def rasterize(mesh: PosedMesh, camera: Camera = Camera()) -> RenderOutput:
    """Rasterize a posed mesh with per-vertex colours (no gradient path)."""
    verts = _as_array(mesh.vertices).reshape(-1, 3).astype(np.float64)
    if verts.shape[0] == 0 or len(mesh.triangles) == 0:
        raise ValueError("cannot rasterize an empty mesh")
    colors = _as_array(mesh.colors).reshape(-1, 3).astype(np.float64)
    iz = 1.0 / (camera.distance - verts[:, 2])
    u = verts[:, 0] * iz * camera.focal + camera.cx
    v = camera.cy - verts[:, 1] * iz * camera.focal
    tri_id, bary, zbuf, (degenerate, behind) = _fragments(u, v, iz, mesh.triangles, camera)
    mask = tri_id >= 0
    tris = np.asarray(mesh.triangles)[tri_id[mask]]
    b = bary[mask]
    rgb = np.full((camera.height, camera.width, 3), BACKGROUND, dtype=np.float32)
    rgb[mask] = np.clip((b[:, :, None] * colors[tris]).sum(axis=1), 0.0, 1.0)
    depth = np.full(mask.shape, np.inf, dtype=np.float32)
    depth[mask] = 1.0 / zbuf[mask]
    return RenderOutput(rgb, mask, depth, tri_id, bary, degenerate, behind)


def _edge(a: Tensor, b: Tensor, p) -> Tensor:
    ax, ay = a[:, 0], a[:, 1]
    return (p[:, 0] - ax) * (b[:, 1] - ay) - (p[:, 1] - ay) * (b[:, 0] - ax)


def shade_fragments(mesh: PosedMesh, u: Tensor, v: Tensor, tri_id: np.ndarray, camera: Camera) -> Tensor:
    """Differentiable (H, W, 3) image for fixed fragment-to-triangle assignment."""
    h, w = tri_id.shape
    flat = tri_id.reshape(-1)
    covered = np.flatnonzero(flat >= 0)
    tris = np.asarray(mesh.triangles)[flat[covered]]
    if covered.size == 0:
        # keep the graph connected so callers can still backpropagate zeros
        return T.reshape(mesh.colors[0:1, :] * 0.0, (1, 1, 3)) + Tensor(np.zeros((h, w, 3)))
    q = T.stack([u, v], axis=1)
    q0, q1, q2 = (T.take(q, tris[:, k]) for k in range(3))
    rows, cols = np.divmod(covered, w)
    p = Tensor(np.stack([cols + 0.5, rows + 0.5], axis=1))
    area = _edge(q0, q1, q2)
    b0 = _edge(q1, q2, p) / area
    b1 = _edge(q2, q0, p) / area
    b2 = _edge(q0, q1, p) / area
    c = mesh.colors
    pix = (
        T.reshape(b0, (-1, 1)) * T.take(c, tris[:, 0])
        + T.reshape(b1, (-1, 1)) * T.take(c, tris[:, 1])
        + T.reshape(b2, (-1, 1)) * T.take(c, tris[:, 2])
    )
    return T.reshape(T.scatter_add(pix, covered, h * w), (h, w, 3))


def render(basis: FaceBasis, coeffs, camera: Camera = Camera()) -> RenderOutput:
    """Coefficients -> image. ``coeffs`` may be a Tensor that requires grad."""
    mesh = pose_mesh(basis, coeffs)
    u, v, iz = project(mesh.vertices, camera)
    tri_id, bary, zbuf, (degenerate, behind) = _fragments(u.data, v.data, iz.data, basis.triangles, camera)
    # visibility is piecewise constant in the coefficients; expose it to gradient checks
    T._log_kink(tri_id)
    image = shade_fragments(mesh, u, v, tri_id, camera)
    mask = tri_id >= 0
    rgb = np.clip(image.data, 0.0, 1.0).astype(np.float32)
    rgb[~mask] = BACKGROUND
    depth = np.full(mask.shape, np.inf, dtype=np.float32)
    depth[mask] = 1.0 / zbuf[mask]
    return RenderOutput(rgb, mask, depth, tri_id, bary, degenerate, behind, image=image)
