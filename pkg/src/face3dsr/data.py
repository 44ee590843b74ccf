"""Training data: synthetic rendered faces and a directory-of-PNG loader."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imageio import read_png
from .morphable import N_EXP, N_ID, N_ILLUM, N_TEX, FaceBasis, generate_basis, neutral_coefficients
from .raster import Camera, render
from .resample import degrade, resize

HR_SIZE = 128


class DataError(Exception):
    pass


@dataclass
class Sample:
    hr: np.ndarray  # (3, 128, 128) float32
    lr: np.ndarray  # (3, s, s) float32
    coeffs: np.ndarray | None = None  # ground-truth coefficients, synthetic only
    name: str = ""

    @property
    def hr_hwc(self) -> np.ndarray:
        return np.transpose(self.hr, (1, 2, 0))


@dataclass
class DatasetSpec:
    source: str = ""  # directory of PNGs; empty for synthetic faces
    hr_size: int = HR_SIZE
    scale: int = 8
    crop: str = "center"
    split: tuple[float, float] = (0.8, 0.2)
    seed: int = 0

    def __post_init__(self):
        if self.scale not in (4, 8):
            raise ValueError(f"scale must be 4 or 8, got {self.scale}")
        if self.hr_size % self.scale:
            raise ValueError(f"hr_size {self.hr_size} not divisible by scale {self.scale}")
        if self.crop != "center":
            raise ValueError(f"unsupported crop rule {self.crop!r}")

    @property
    def lr_size(self) -> int:
        return self.hr_size // self.scale


def sample_coefficients(rng: np.random.Generator) -> np.ndarray:
    """Ground-truth coefficient draw for synthetic faces."""
    x = neutral_coefficients().astype(np.float64)
    o = 0
    x[o:o + N_ID] = rng.normal(0, 4.0, N_ID)
    o += N_ID
    x[o:o + N_EXP] = rng.normal(0, 4.0, N_EXP)
    o += N_EXP
    x[o:o + N_TEX] = rng.normal(0, 0.2, N_TEX)
    o += N_TEX
    x[o] *= rng.uniform(0.75, 1.15)
    x[o + 1:o + 4] = rng.normal(0, 0.35, 3)
    x[o + 4:o + N_ILLUM] = rng.normal(0, 0.12, 5)
    o += N_ILLUM
    x[o:o + 3] = rng.normal(0, 0.12, 3)
    x[o + 3:o + 5] = rng.normal(0, 0.04, 2)
    x[o + 5] = rng.normal(0, 0.3)
    return x.astype(np.float32)


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    palette = np.array([
        (0.20, 0.35, 0.25), (0.25, 0.30, 0.55), (0.45, 0.47, 0.50), (0.15, 0.25, 0.40),
        (0.30, 0.45, 0.30), (0.55, 0.60, 0.70), (0.10, 0.12, 0.15),
    ])
    c0, c1 = palette[rng.choice(len(palette), 2, replace=False)]
    angle = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    t = np.clip(0.5 + (xx - 0.5) * np.cos(angle) + (yy - 0.5) * np.sin(angle), 0, 1)[..., None]
    return (1 - t) * c0 + t * c1


class SyntheticFaceDataset:
    """Deterministic pseudo-photos: renders of random coefficients on a
    gradient background with additive pixel noise. Sample ``i`` depends only
    on ``(seed, i)``."""

    def __init__(self, n: int, seed: int = 0, scale: int = 8, basis: FaceBasis | None = None,
                 camera: Camera = Camera(), noise: float = 0.015, workers: int = 1):
        if n < 1:
            raise ValueError("dataset must contain at least one sample")
        self.spec = DatasetSpec(scale=scale, seed=seed)
        self.basis = basis if basis is not None else generate_basis()
        self.camera = camera
        self.noise = noise
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                self.samples = list(pool.map(self._make, range(n)))
        else:
            self.samples = [self._make(i) for i in range(n)]

    def _make(self, i: int) -> Sample:
        rng = np.random.default_rng([self.spec.seed, i])
        coeffs = sample_coefficients(rng)
        out = render(self.basis, coeffs, self.camera)
        bg = _background(rng, self.camera.height)
        img = np.where(out.face_mask[..., None], out.rgb, bg)
        img = np.clip(img + rng.normal(0, self.noise, img.shape), 0, 1).astype(np.float32)
        hr = np.ascontiguousarray(np.transpose(img, (2, 0, 1)))
        return Sample(hr, degrade(hr, self.spec.scale), coeffs, name=f"synth_{self.spec.seed}_{i:05d}")

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i: int) -> Sample:
        return self.samples[i]

    def __iter__(self):
        return iter(self.samples)


def center_crop_resize(img: np.ndarray, size: int = HR_SIZE) -> np.ndarray:
    """(H, W, 3) -> (3, size, size): central square crop, bicubic resize."""
    h, w = img.shape[:2]
    s = min(h, w)
    top, left = (h - s) // 2, (w - s) // 2
    sq = np.transpose(img[top:top + s, left:left + s], (2, 0, 1))
    if s == size:
        return np.ascontiguousarray(sq, dtype=np.float32)
    return np.clip(resize(sq, size, size), 0, 1)


class PngDirectoryDataset:
    """Face crops from ``*.png`` files in a directory, sorted by name."""

    def __init__(self, directory, scale: int = 8):
        self.spec = DatasetSpec(source=str(directory), scale=scale)
        files = sorted(Path(directory).glob("*.png"))
        if not files:
            raise DataError(f"no PNG files in {directory}")
        self.samples = []
        for f in files:
            try:
                img = read_png(f)
            except OSError as exc:
                raise DataError(f"cannot read {f}: {exc}") from exc
            hr = center_crop_resize(img)
            self.samples.append(Sample(hr, degrade(hr, scale), None, name=f.name))

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i: int) -> Sample:
        return self.samples[i]

    def __iter__(self):
        return iter(self.samples)


def split(samples, ratios=(0.8, 0.2), seed: int = 0):
    """Shuffle deterministically and cut into train / validation lists."""
    idx = np.random.default_rng(seed).permutation(len(samples))
    n_train = int(round(ratios[0] * len(samples)))
    return [samples[i] for i in idx[:n_train]], [samples[i] for i in idx[n_train:]]
