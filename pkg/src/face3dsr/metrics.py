"""PSNR and SSIM on the 8-bit scale.

PSNR uses the RGB mean squared error; identical images report the 99 dB cap.
SSIM is computed on BT.601 luma with an 11x11 Gaussian window (sigma 1.5),
K1 = 0.01, K2 = 0.03, L = 255, averaged over all fully-inside windows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PSNR_CAP = 99.0
_LUMA = np.array([0.299, 0.587, 0.114])


def _hwc(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 3 and a.shape[0] == 3 and a.shape[2] != 3:
        a = np.transpose(a, (1, 2, 0))
    return a


def psnr(a, b) -> float:
    a, b = _hwc(a), _hwc(b)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shapes differ {a.shape} vs {b.shape}")
    mse = float(np.mean((a * 255.0 - b * 255.0) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 20.0 * math.log10(255.0 / math.sqrt(mse)))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def luma(img) -> np.ndarray:
    a = _hwc(img)
    return a @ _LUMA if a.ndim == 3 else a


def ssim(a, b, window: int = 11, sigma: float = 1.5) -> float:
    ya, yb = luma(a) * 255.0, luma(b) * 255.0
    if ya.shape != yb.shape:
        raise ValueError(f"ssim: shapes differ {ya.shape} vs {yb.shape}")
    if min(ya.shape) < window:
        raise ValueError(f"ssim: image {ya.shape} smaller than the {window}x{window} window")
    c1 = (0.01 * 255) ** 2
    c2 = (0.03 * 255) ** 2
    g = gaussian_window(window, sigma)
    mu_a = _filter_valid(ya, g)
    mu_b = _filter_valid(yb, g)
    var_a = _filter_valid(ya * ya, g) - mu_a * mu_a
    var_b = _filter_valid(yb * yb, g) - mu_b * mu_b
    cov = _filter_valid(ya * yb, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    names: list[str] = field(default_factory=list)
    psnr: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, name: str, pred, gt) -> None:
        self.names.append(name)
        self.psnr.append(psnr(pred, gt))
        self.ssim.append(ssim(pred, gt))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr)) if self.psnr else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else float("nan")

    def sorted(self) -> "MetricReport":
        order = sorted(range(len(self.names)), key=self.names.__getitem__)
        return MetricReport([self.names[i] for i in order], [self.psnr[i] for i in order],
                            [self.ssim[i] for i in order], dict(self.metadata))

    def lines(self) -> list[str]:
        rep = self.sorted()
        out = [f"{k}={v}" for k, v in sorted(rep.metadata.items())]
        for n, p, s in zip(rep.names, rep.psnr, rep.ssim):
            out.append(f"image={n} psnr={p:.4f} ssim={s:.6f}")
        out.append(f"count={len(rep.names)}")
        out.append(f"mean_psnr={rep.mean_psnr:.4f}")
        out.append(f"mean_ssim={rep.mean_ssim:.6f}")
        return out
