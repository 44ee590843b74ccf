"""Skin-weighted rendering loss and the 7-channel prior stack for the SR network."""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import ConfigError, parse_kv
from .morphable import COEFF_SPLIT, N_COEFFS
from .resample import resize
from .tensor import DimensionError, Tensor


class DegenerateMaskError(ValueError):
    """The attention-weighted face region of a sample has zero total weight."""


@dataclass
class GaussianMixture2D:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, 2)
    covs: np.ndarray  # (K, 2, 2)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64).reshape(-1, 2)
        self.covs = np.asarray(self.covs, dtype=np.float64).reshape(-1, 2, 2)
        if not np.isclose(self.weights.sum(), 1.0, atol=1e-6):
            raise ValueError(f"mixture weights sum to {self.weights.sum()}, not 1")
        if np.any(np.linalg.eigvalsh(self.covs) <= 0):
            raise ValueError("mixture covariances must be positive definite")

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        """Log density at points ``x`` of shape (..., 2)."""
        inv = np.linalg.inv(self.covs)
        logdet = np.log(np.linalg.det(self.covs))
        d = x[..., None, :] - self.means  # (..., K, 2)
        maha = np.einsum("...ki,kij,...kj->...k", d, inv, d)
        comp = np.log(self.weights) - 0.5 * (maha + logdet) - np.log(2 * np.pi)
        top = comp.max(axis=-1, keepdims=True)
        return (top + np.log(np.exp(comp - top).sum(axis=-1, keepdims=True)))[..., 0]


@dataclass
class SkinModel:
    """Two-class Bayes classifier over normalised (r, g) chromaticity."""

    skin: GaussianMixture2D
    nonskin: GaussianMixture2D
    prior_skin: float = 0.5
    prior_nonskin: float = 0.5

    @classmethod
    def from_mapping(cls, kv: dict[str, str]) -> "SkinModel":
        def mixture(tag):
            comps = sorted({int(k.split(".")[1]) for k in kv if k.startswith(tag + ".")})
            if not comps:
                raise ConfigError(f"skin model has no {tag} components")
            try:
                w = [float(kv[f"{tag}.{k}.weight"]) for k in comps]
                m = [[float(v) for v in kv[f"{tag}.{k}.mean"].split()] for k in comps]
                c = [[float(v) for v in kv[f"{tag}.{k}.cov"].split()] for k in comps]
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"incomplete {tag} component: {exc}") from exc
            return GaussianMixture2D(w, m, c)

        try:
            ps = float(kv.get("prior.skin", 0.5))
            pn = float(kv.get("prior.nonskin", 0.5))
        except ValueError as exc:
            raise ConfigError(f"bad class prior: {exc}") from exc
        return cls(mixture("skin"), mixture("nonskin"), ps, pn)

    @classmethod
    def load(cls, path=None) -> "SkinModel":
        """Read a skin model config; ``None`` loads the shipped parameters."""
        if path is None or str(path) == "":
            text = resources.files("face3dsr").joinpath("resources/skin_model.cfg").read_text()
        else:
            try:
                text = Path(path).read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read skin model {path}: {exc}") from exc
        return cls.from_mapping(parse_kv(text))

    @property
    def prior_ratio(self) -> float:
        return self.prior_skin / (self.prior_skin + self.prior_nonskin)


def chromaticity(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(H, W, 3) -> ((H, W, 2) normalised rg, (H, W) valid mask)."""
    img = np.asarray(image, dtype=np.float64)
    s = img.sum(axis=-1)
    valid = s > 1e-6
    safe = np.where(valid, s, 1.0)[..., None]
    return img[..., :2] / safe, valid


def skin_mask(image: np.ndarray, model: SkinModel | None = None) -> np.ndarray:
    """Per-pixel posterior P(skin | colour) for an (H, W, 3) image in [0, 1].

    Black pixels have no chromaticity and get the class prior.
    """
    model = model or SkinModel.load()
    rg, valid = chromaticity(image)
    ls = np.log(model.prior_skin) + model.skin.log_pdf(rg)
    ln = np.log(model.prior_nonskin) + model.nonskin.log_pdf(rg)
    post = 1.0 / (1.0 + np.exp(np.clip(ln - ls, -700, 700)))
    post = np.where(valid, post, model.prior_ratio)
    return np.clip(post, 1e-6, 1 - 1e-6).astype(np.float32)


def rendering_loss(sharp, rendered, attention, face_mask) -> Tensor:
    """Skin-weighted mean RGB residual norm over the rendered face region.

    ``sharp`` (L, H, W, 3) array, ``rendered`` (L, H, W, 3) Tensor,
    ``attention`` (L, H, W) weights, ``face_mask`` (L, H, W) bool. Per sample
    the residual norms are averaged with weights ``attention`` restricted to
    the mask; the result is the mean over samples.
    """
    rendered = T._wrap(rendered)
    sharp = np.asarray(sharp)
    att = np.asarray(attention, dtype=np.float64)
    mask = np.asarray(face_mask, dtype=bool)
    if sharp.shape != rendered.shape or att.shape != mask.shape or att.shape != sharp.shape[:-1]:
        raise DimensionError(
            f"rendering_loss: shapes disagree: sharp {sharp.shape}, rendered {rendered.shape}, "
            f"attention {att.shape}, mask {mask.shape}"
        )
    weights = np.where(mask, att, 0.0)
    n = sharp.shape[0]
    denom = weights.reshape(n, -1).sum(axis=1)
    bad = np.flatnonzero(~(denom > 0))
    if bad.size:
        raise DegenerateMaskError(f"samples {bad.tolist()} have zero attention inside the face region")
    weights = weights / denom.reshape((n,) + (1,) * (weights.ndim - 1))
    residual = T.norm(rendered - Tensor(sharp), axis=-1)
    return T.tsum(residual * Tensor(weights)) * (1.0 / n)


# -- coefficient feature maps ------------------------------------------------

def _minmax(v: np.ndarray) -> np.ndarray:
    lo, hi = v.min(), v.max()
    if hi - lo == 0:
        return np.full(v.shape, 0.5)
    return (v - lo) / (hi - lo)


def coeff_to_maps(coeffs, lr_size: int) -> np.ndarray:
    """Embed (identity, expression, texture, illumination+pose) into 4 maps.

    Each vector is min-max scaled to [0, 1] (constant vectors become 0.5) and
    written row-major from the top-left of an ``lr_size`` square; the
    remainder stays zero. Returns (4, lr_size, lr_size) float32.
    """
    x = np.asarray(coeffs.data if isinstance(coeffs, Tensor) else coeffs, dtype=np.float64).reshape(-1)
    if x.size != N_COEFFS:
        raise DimensionError(f"expected {N_COEFFS} coefficients, got {x.size}")
    if lr_size * lr_size < max(COEFF_SPLIT):
        raise ValueError(f"lr_size {lr_size} too small for an {max(COEFF_SPLIT)}-entry map")
    bounds = np.cumsum((0,) + COEFF_SPLIT)
    parts = [x[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])]
    vectors = [parts[0], parts[1], parts[2], np.concatenate([parts[3], parts[4]])]
    maps = np.zeros((4, lr_size * lr_size))
    for k, v in enumerate(vectors):
        maps[k, : v.size] = _minmax(v)
    return maps.reshape(4, lr_size, lr_size).astype(np.float32)


@dataclass
class PriorStack:
    """(7, s, s): rendered RGB at LR size, then identity, expression, texture, illum+pose maps."""

    channels: np.ndarray

    def __post_init__(self):
        c = self.channels
        if c.ndim != 3 or c.shape[0] != 7 or c.shape[1] != c.shape[2]:
            raise DimensionError(f"prior stack must be (7, s, s), got {c.shape}")

    @property
    def lr_size(self) -> int:
        return self.channels.shape[1]


def build_prior_stack(render, coeffs, lr_size: int) -> PriorStack:
    """Downsample the HR render to ``lr_size`` and stack it with the coefficient maps."""
    rgb = render.rgb if hasattr(render, "rgb") else np.asarray(render)
    chw = np.transpose(rgb, (2, 0, 1))
    small = np.clip(resize(chw, lr_size, lr_size), 0.0, 1.0)
    return PriorStack(np.concatenate([small, coeff_to_maps(coeffs, lr_size)]).astype(np.float32))
