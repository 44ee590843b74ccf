import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from face3dsr import tensor as T
from face3dsr.config import ConfigError
from face3dsr.data import sample_coefficients
from face3dsr.morphable import COEFF_SPLIT, N_COEFFS, neutral_coefficients
from face3dsr.priors import (
    DegenerateMaskError,
    GaussianMixture2D,
    PriorStack,
    SkinModel,
    build_prior_stack,
    coeff_to_maps,
    rendering_loss,
    skin_mask,
)
from face3dsr.raster import render
from face3dsr.tensor import DimensionError


def posterior_oracle(model, rg):
    """Bayes rule with the mixture densities summed one component at a time."""
    def density(mix):
        total = 0.0
        for w, m, c in zip(mix.weights, mix.means, mix.covs):
            d = rg - m
            total += w * math.exp(-0.5 * d @ np.linalg.solve(c, d)) / (2 * math.pi * math.sqrt(np.linalg.det(c)))
        return total

    s = model.prior_skin * density(model.skin)
    n = model.prior_nonskin * density(model.nonskin)
    return s / (s + n)


def rgb_with_chromaticity(rg, brightness=1.0):
    r, g = rg
    return np.array([r, g, 1 - r - g]) * brightness


def test_pixel_at_skin_mean_is_skin(skin_model):
    for mean in skin_model.skin.means:
        a = skin_mask(rgb_with_chromaticity(mean)[None, None], skin_model)[0, 0]
        assert a > 0.9
        assert a == pytest.approx(posterior_oracle(skin_model, mean), abs=1e-5)


def test_green_image_is_not_skin(skin_model):
    assert skin_mask(np.tile([0.1, 0.8, 0.1], (8, 8, 1)), skin_model).max() < 0.1


@given(hnp.arrays(np.float64, 3, elements=st.floats(0.02, 1)))
def test_mask_matches_bayes_oracle(rgb):
    model = SkinModel.load()
    rg = rgb[:2] / rgb.sum()
    expected = min(max(posterior_oracle(model, rg), 1e-6), 1 - 1e-6)
    assert skin_mask(rgb[None, None], model)[0, 0] == pytest.approx(expected, abs=1e-5)


def test_equal_likelihoods_give_half_and_black_gets_prior():
    mix = GaussianMixture2D([1.0], [[0.4, 0.3]], [np.eye(2) * 0.01])
    model = SkinModel(mix, mix, 0.5, 0.5)
    assert skin_mask(np.array([[[0.2, 0.5, 0.3]]]), model)[0, 0] == pytest.approx(0.5)
    biased = SkinModel(mix, mix, 0.3, 0.7)
    assert skin_mask(np.zeros((1, 1, 3)), biased)[0, 0] == pytest.approx(0.3)


def test_mean_face_texture_is_mostly_skin(basis, skin_model):
    assert skin_mask(basis.mean_texture.reshape(1, -1, 3), skin_model).mean() > 0.9


def test_mixture_validation_and_config_errors():
    with pytest.raises(ValueError):
        GaussianMixture2D([0.6, 0.6], [[0, 0], [1, 1]], [np.eye(2), np.eye(2)])
    with pytest.raises(ValueError):
        GaussianMixture2D([1.0], [[0, 0]], [-np.eye(2)])
    with pytest.raises(ConfigError):
        SkinModel.from_mapping({"skin.0.weight": "1"})
    with pytest.raises(ConfigError):
        SkinModel.load("/nonexistent/skin.cfg")


# -- rendering loss ----------------------------------------------------------

def test_single_pixel_residual_gives_half_over_p():
    h, w = 4, 5
    sharp = np.full((1, h, w, 3), 0.2)
    rendered = sharp.copy()
    rendered[0, 2, 3] += [0.3, 0.0, 0.4]
    ones = np.ones((1, h, w))
    loss = rendering_loss(sharp, T.Tensor(rendered), ones, ones.astype(bool)).item()
    assert abs(loss - 0.5 / (h * w)) < 1e-7


def test_identical_images_give_zero_loss():
    x = np.random.default_rng(0).uniform(0, 1, (2, 6, 6, 3))
    m = np.ones((2, 6, 6))
    assert rendering_loss(x, T.Tensor(x), m, m > 0).item() == 0.0


def test_attention_at_one_pixel_selects_its_residual():
    rng = np.random.default_rng(1)
    sharp, rend = rng.uniform(0, 1, (1, 6, 6, 3)), rng.uniform(0, 1, (1, 6, 6, 3))
    att = np.zeros((1, 6, 6))
    att[0, 1, 4] = 0.37
    loss = rendering_loss(sharp, T.Tensor(rend), att, np.ones((1, 6, 6), bool)).item()
    assert loss == pytest.approx(np.linalg.norm(sharp[0, 1, 4] - rend[0, 1, 4]), rel=1e-6)


@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_loss_invariant_to_positive_attention_scale(seed, c):
    rng = np.random.default_rng(seed)
    sharp, rend = rng.uniform(0, 1, (2, 5, 5, 3)), rng.uniform(0, 1, (2, 5, 5, 3))
    att = rng.uniform(0.01, 1, (2, 5, 5))
    mask = rng.uniform(size=(2, 5, 5)) < 0.7
    mask[:, 0, 0] = True
    with T.shadow64():
        a = rendering_loss(sharp, T.Tensor(rend), att, mask).item()
        b = rendering_loss(sharp, T.Tensor(rend), c * att, mask).item()
    assert a == pytest.approx(b, rel=1e-12)


def test_loss_averages_over_samples():
    rng = np.random.default_rng(2)
    sharp, rend = rng.uniform(0, 1, (3, 4, 4, 3)), rng.uniform(0, 1, (3, 4, 4, 3))
    att, mask = rng.uniform(0.1, 1, (3, 4, 4)), np.ones((3, 4, 4), bool)
    per = [rendering_loss(sharp[j:j + 1], T.Tensor(rend[j:j + 1]), att[j:j + 1], mask[j:j + 1]).item() for j in range(3)]
    assert rendering_loss(sharp, T.Tensor(rend), att, mask).item() == pytest.approx(np.mean(per), rel=1e-6)


def test_degenerate_mask_is_an_error():
    x = np.zeros((2, 4, 4, 3))
    mask = np.ones((2, 4, 4), bool)
    mask[1] = False
    with pytest.raises(DegenerateMaskError, match=r"\[1\]"):
        rendering_loss(x, T.Tensor(x), np.ones((2, 4, 4)), mask)
    with pytest.raises(DimensionError):
        rendering_loss(x, T.Tensor(x[:1]), np.ones((2, 4, 4)), mask)


# -- coefficient maps and prior stack ----------------------------------------

def test_map_layout_and_scaling():
    c = np.random.default_rng(3).normal(size=N_COEFFS)
    maps = coeff_to_maps(c, 16)
    assert maps.shape == (4, 16, 16) and maps.dtype == np.float32
    alpha = c[:80]
    flat = maps.reshape(4, -1)
    np.testing.assert_allclose(flat[0, :80], (alpha - alpha.min()) / (alpha.max() - alpha.min()), atol=1e-6)
    assert not flat[0, 80:].any() and not flat[1, 64:].any() and not flat[2, 80:].any()
    gp = c[-15:]
    np.testing.assert_allclose(flat[3, :15], (gp - gp.min()) / (gp.max() - gp.min()), atol=1e-6)
    assert not flat[3, 15:].any()


def test_constant_vector_maps_to_half():
    c = np.random.default_rng(4).normal(size=N_COEFFS)
    c[80:144] = 2.5
    flat = coeff_to_maps(c, 32).reshape(4, -1)
    assert np.all(flat[1, :64] == 0.5) and not flat[1, 64:].any()


@given(hnp.arrays(np.float64, N_COEFFS, elements=st.floats(-10, 10)))
def test_maps_preserve_order_within_each_vector(c):
    flat = coeff_to_maps(c, 16).reshape(4, -1)
    bounds = np.cumsum((0,) + COEFF_SPLIT)
    parts = [c[bounds[0]:bounds[1]], c[bounds[1]:bounds[2]], c[bounds[2]:bounds[3]], c[bounds[3]:]]
    for k, v in enumerate(parts):
        m = flat[k, :v.size]
        assert 0 <= m.min() and m.max() <= 1
        order = np.argsort(v, kind="stable")
        assert np.all(np.diff(m[order]) >= 0)


def test_map_errors():
    with pytest.raises(DimensionError):
        coeff_to_maps(np.zeros(238), 16)
    with pytest.raises(ValueError):
        coeff_to_maps(np.zeros(N_COEFFS), 8)


@pytest.mark.parametrize("lr_size", [16, 32])
def test_prior_stack_from_render(basis, lr_size):
    c = sample_coefficients(np.random.default_rng(5))
    stack = build_prior_stack(render(basis, c), c, lr_size)
    assert stack.channels.shape == (7, lr_size, lr_size) and stack.lr_size == lr_size
    assert 0 <= stack.channels.min() and stack.channels.max() <= 1
    np.testing.assert_array_equal(stack.channels[3:], coeff_to_maps(c, lr_size))


def test_black_render_leaves_maps_untouched(basis):
    c = neutral_coefficients()
    c[224:233] = 0
    stack = build_prior_stack(render(basis, c), c, 16)
    assert not stack.channels[:3].any()
    np.testing.assert_array_equal(stack.channels[3:], coeff_to_maps(c, 16))


def test_constant_gray_render_stays_gray():
    gray = np.full((128, 128, 3), 0.42, dtype=np.float32)
    stack = build_prior_stack(gray, np.zeros(N_COEFFS), 16)
    assert np.all(stack.channels[:3] == np.float32(0.42))


def test_prior_stack_shape_check():
    with pytest.raises(DimensionError):
        PriorStack(np.zeros((6, 16, 16)))
