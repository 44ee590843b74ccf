import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from face3dsr import kernels
from face3dsr import tensor as T
from face3dsr.data import sample_coefficients
from face3dsr.morphable import N_ID, N_EXP, N_TEX, PosedMesh, neutral_coefficients
from face3dsr.raster import BACKGROUND, Camera, project, rasterize, render

CAM = Camera()
GAMMA = slice(N_ID + N_EXP + N_TEX, N_ID + N_EXP + N_TEX + 9)


def mesh(verts, colors, tris):
    v = np.asarray(verts, dtype=np.float32)
    return PosedMesh(T.Tensor(v), T.Tensor(np.asarray(colors, dtype=np.float32)), T.Tensor(np.zeros_like(v)),
                     np.asarray(tris))


def world_for_pixels(px, depth, cam=CAM):
    """Inverse projection: pixel coords (x right, y down) at a camera distance."""
    px = np.asarray(px, dtype=np.float64)
    x = (px[:, 0] - cam.cx) * depth / cam.focal
    y = (cam.cy - px[:, 1]) * depth / cam.focal
    return np.column_stack([x, y, np.full(len(px), cam.distance - depth)])


def test_camera_validation():
    with pytest.raises(ValueError):
        Camera(focal=0)
    with pytest.raises(ValueError):
        Camera(cx=200)


def test_projection_formula():
    v = np.array([[0.1, 0.2, 0.3], [0.0, 0.0, 0.0]])
    u, w, iz = project(v, CAM)
    assert u.data[0] == pytest.approx(64 + 1015 * 0.1 / 9.7, rel=1e-6)
    assert w.data[0] == pytest.approx(64 - 1015 * 0.2 / 9.7, rel=1e-6)
    assert (u.data[1], w.data[1]) == (64, 64)
    assert iz.data[1] == pytest.approx(0.1)


def half_plane_oracle(p, colors, h, w):
    """Coverage and colour by direct edge-function evaluation at pixel centres."""
    ys, xs = np.mgrid[0:h, 0:w] + 0.5
    (x0, y0), (x1, y1), (x2, y2) = p
    area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    l0 = ((x1 - xs) * (y2 - ys) - (x2 - xs) * (y1 - ys)) / area
    l1 = ((x2 - xs) * (y0 - ys) - (x0 - xs) * (y2 - ys)) / area
    l2 = 1 - l0 - l1
    inside = (l0 > 0) & (l1 > 0) & (l2 > 0)
    rgb = l0[..., None] * colors[0] + l1[..., None] * colors[1] + l2[..., None] * colors[2]
    return inside, rgb


@pytest.mark.parametrize("seed", range(5))
def test_single_triangle_matches_half_plane_oracle(seed):
    rng = np.random.default_rng(seed)
    px = rng.uniform(10, 118, (3, 2))
    colors = rng.uniform(0, 1, (3, 3))
    out = rasterize(mesh(world_for_pixels(px, 8.0), colors, [[0, 1, 2]]), CAM)
    inside, rgb = half_plane_oracle(px, colors, 128, 128)
    # random vertices: no pixel centre lies exactly on an edge
    np.testing.assert_array_equal(out.face_mask, inside)
    np.testing.assert_allclose(out.rgb[inside], rgb[inside], atol=2e-5)
    assert np.all(out.rgb[~inside] == BACKGROUND)


def test_nearer_triangle_wins():
    px = np.array([[20, 20], [100, 30], [40, 110]], dtype=float)
    verts = np.vstack([world_for_pixels(px, 9.0), world_for_pixels(px, 8.0)])
    colors = np.vstack([np.tile([1, 0, 0], (3, 1)), np.tile([0, 0, 1], (3, 1))])
    out = rasterize(mesh(verts, colors, [[0, 1, 2], [3, 4, 5]]), CAM)
    assert out.face_mask.sum() > 1000
    assert np.all(out.tri_id[out.face_mask] == 1)
    np.testing.assert_allclose(out.rgb[out.face_mask], [[0, 0, 1]] * int(out.face_mask.sum()), atol=1e-6)
    np.testing.assert_allclose(out.depth[out.face_mask], 8.0, rtol=1e-5)


def test_equal_depth_tie_goes_to_lower_index():
    px = np.array([[20, 20], [100, 30], [40, 110]], dtype=float)
    w = world_for_pixels(px, 8.0)
    out = rasterize(mesh(np.vstack([w, w]), np.vstack([np.ones((3, 3)), np.zeros((3, 3))]), [[0, 1, 2], [3, 4, 5]]))
    assert np.all(out.tri_id[out.face_mask] == 0)


def test_behind_camera_and_offscreen_give_background():
    behind = np.array([[0, 0, 11.0], [1, 0, 12.0], [0, 1, 11.0]])
    offscreen = world_for_pixels(np.array([[-50, -50], [-10, -60], [-40, -5]], dtype=float), 8.0)
    out = rasterize(mesh(np.vstack([behind, offscreen]), np.ones((6, 3)), [[0, 1, 2], [3, 4, 5]]))
    assert not out.face_mask.any()
    assert np.all(out.rgb == BACKGROUND) and np.all(np.isinf(out.depth))
    assert out.behind == 1


def test_degenerate_triangles_counted_and_skipped():
    w = world_for_pixels(np.array([[10, 10], [50, 50], [90, 90], [20, 80]], dtype=float), 8.0)
    out = rasterize(mesh(w, np.ones((4, 3)), [[0, 1, 2], [0, 0, 3], [0, 1, 3]]))
    assert out.degenerate == 2
    assert out.face_mask.any() and set(np.unique(out.tri_id[out.face_mask])) == {2}


coord = st.integers(0, 32).map(lambda v: v / 2)  # half-pixel grid puts centres on edges


@given(st.lists(st.tuples(coord, coord), min_size=4, max_size=4, unique=True))
def test_shared_edges_cover_each_pixel_once(pts):
    """Top-left rule: a star-shaped fan around a point covers every pixel at most once."""
    centre = np.array([[8.25, 8.25]])
    p = np.array(pts, dtype=float)
    ang = np.arctan2(p[:, 1] - centre[0, 1], p[:, 0] - centre[0, 0])
    order = np.argsort(ang)
    p, ang = p[order], ang[order]
    gaps = np.diff(np.append(ang, ang[0] + 2 * np.pi))
    assume(np.all(gaps > 1e-9) and np.all(gaps < np.pi - 1e-9))  # a proper fan without overlap
    screen = np.column_stack([np.vstack([p, centre]), np.ones(5)])
    tris = np.array([[4, 0, 1], [4, 1, 2], [4, 2, 3], [4, 3, 0]])
    counts = np.zeros((16, 16), dtype=int)
    for t in tris:
        tri_id, *_ = kernels.rasterize(screen, t[None], 16, 16)
        counts += tri_id >= 0
    assert counts.max() <= 1


def test_axis_aligned_square_covers_exact_pixel_block():
    """Two triangles forming a pixel-aligned square cover it once, with no seam or double hit."""
    screen = np.array([[2, 2, 1], [10, 2, 1], [10, 6, 1], [2, 6, 1]], dtype=float)
    total = np.zeros((12, 12), dtype=int)
    for t in ([0, 1, 2], [0, 2, 3]):
        tri_id, *_ = kernels.rasterize(screen, np.array([t]), 12, 12)
        total += tri_id >= 0
    expected = np.zeros((12, 12), dtype=int)
    expected[2:6, 2:10] = 1
    np.testing.assert_array_equal(total, expected)


def test_render_invariants(basis):
    out = render(basis, sample_coefficients(np.random.default_rng(5)))
    assert out.rgb.shape == (128, 128, 3) and out.rgb.dtype == np.float32
    np.testing.assert_array_equal(out.face_mask, np.isfinite(out.depth))
    assert np.all(out.rgb[~out.face_mask] == BACKGROUND)
    assert 0 <= out.rgb.min() and out.rgb.max() <= 1
    diff = np.clip(out.image.data, 0, 1)[out.face_mask] - out.rgb[out.face_mask]
    assert np.abs(diff).max() < 1e-6


def test_render_matches_rasterize_on_posed_mesh(basis):
    from face3dsr.morphable import pose_mesh

    c = sample_coefficients(np.random.default_rng(8))
    a = render(basis, c)
    b = rasterize(pose_mesh(basis, c))
    np.testing.assert_array_equal(a.tri_id, b.tri_id)
    # float32 autodiff path against the float64 rasterizer
    np.testing.assert_allclose(a.rgb, b.rgb, atol=2e-5)


def test_render_is_deterministic(basis):
    c = sample_coefficients(np.random.default_rng(2))
    a, b = render(basis, c), render(basis, c)
    assert a.rgb.tobytes() == b.rgb.tobytes() and a.depth.tobytes() == b.depth.tobytes()


def test_zero_gamma_is_black_with_same_mask(basis):
    c = sample_coefficients(np.random.default_rng(4))
    lit = render(basis, c)
    c0 = c.copy()
    c0[GAMMA] = 0
    dark = render(basis, c0)
    np.testing.assert_array_equal(dark.face_mask, lit.face_mask)
    assert not dark.rgb.any()


def test_mask_invariant_under_texture_and_lighting(basis):
    rng = np.random.default_rng(6)
    c = sample_coefficients(rng)
    base = render(basis, c).face_mask
    c2 = c.copy()
    c2[N_ID + N_EXP:N_ID + N_EXP + N_TEX] = rng.normal(0, 1, N_TEX)
    c2[GAMMA] = rng.normal(0, 1, 9)
    np.testing.assert_array_equal(render(basis, c2).face_mask, base)


def test_translation_shifts_centroid_by_pinhole_amount(basis):
    c = neutral_coefficients()
    a = render(basis, c)
    dx = 0.05
    c2 = c.copy()
    c2[-3] = dx
    b = render(basis, c2)
    ys, xs = np.nonzero(a.face_mask)
    ys2, xs2 = np.nonzero(b.face_mask)
    depth = float(np.mean(a.depth[a.face_mask]))
    assert xs2.mean() - xs.mean() == pytest.approx(CAM.focal * dx / depth, abs=0.3)
    assert abs(ys2.mean() - ys.mean()) < 0.3


def test_mean_intensity_gradient_wrt_gamma(basis):
    """Visibility does not depend on gamma, so the fixed-visibility gradient is exact."""
    c = sample_coefficients(np.random.default_rng(9)).astype(np.float64)
    with T.shadow64():
        x = T.Tensor(c, requires_grad=True)
        T.mean(render(basis, x).image).backward()
        analytic = x.grad[GAMMA]
        h = 1e-4
        numeric = []
        for k in range(9):
            cp, cm = c.copy(), c.copy()
            cp[GAMMA.start + k] += h
            cm[GAMMA.start + k] -= h
            fp = T.mean(render(basis, cp).image).item()
            fm = T.mean(render(basis, cm).image).item()
            numeric.append((fp - fm) / (2 * h))
    numeric = np.array(numeric)
    rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-6)
    assert rel.max() < 1e-3


def test_empty_mesh_rejected():
    with pytest.raises(ValueError):
        rasterize(mesh(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3), dtype=int)))
