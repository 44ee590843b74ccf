"""Coefficient regressor and the prior-conditioned super-resolution network.

Parameters live on small :class:`Module` objects. Initialisation draws each
layer's weights from an RNG keyed by ``(seed, layer name)``, so adding or
removing the prior-conditioning layers leaves every other layer's initial
weights unchanged.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import functional as F
from . import tensor as T
from .morphable import N_COEFFS, FaceCoefficients, neutral_coefficients
from .tensor import DimensionError, Tensor


# -- module plumbing ---------------------------------------------------------

class Module:
    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield from val.named_modules(f"{prefix}{key}.")
            elif isinstance(val, list):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_modules(f"{prefix}{key}.{i}.")

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for prefix, mod in self.named_modules():
            for key, val in vars(mod).items():
                if isinstance(val, Tensor) and val.requires_grad:
                    out[prefix + key] = val
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.named_parameters().values())

    def initialize(self, seed: int) -> "Module":
        for prefix, mod in self.named_modules():
            if hasattr(mod, "reset"):
                mod.reset(_layer_rng(seed, prefix))
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters().items()}

    def load_state_dict(self, tensors: dict[str, np.ndarray], prefix: str = "") -> None:
        for name, p in self.named_parameters().items():
            key = prefix + name
            if key not in tensors:
                raise KeyError(f"missing tensor {key!r}")
            arr = tensors[key]
            if arr.shape != p.shape:
                raise DimensionError(f"tensor {key!r} has shape {arr.shape}, model expects {p.shape}")
            p.data = np.array(arr, dtype=np.float32)


def _layer_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def _param(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)


def _kaiming_uniform(rng, shape, fan_in) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int = 3, stride: int = 1, pad: int | None = None):
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        self.weight = _param((cout, cin, k, k))
        self.bias = _param((cout,))

    def reset(self, rng):
        o, c, k, _ = self.weight.shape
        self.weight.data = _kaiming_uniform(rng, self.weight.shape, c * k * k)
        self.bias.data = np.zeros(o, dtype=np.float32)

    def __call__(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class ConvTranspose2d(Module):
    def __init__(self, cin: int, cout: int, k: int = 4, stride: int = 2, pad: int = 1):
        self.stride = stride
        self.pad = pad
        self.weight = _param((cin, cout, k, k))
        self.bias = _param((cout,))

    def reset(self, rng):
        c, o, k, _ = self.weight.shape
        # each output pixel sees about cin * (k / stride)^2 inputs
        fan_in = max(1, c * (k // self.stride) ** 2)
        self.weight.data = _kaiming_uniform(rng, self.weight.shape, fan_in)
        self.bias.data = np.zeros(o, dtype=np.float32)

    def __call__(self, x):
        return F.transposed_conv2d(x, self.weight, self.bias, self.stride, self.pad)


class Linear(Module):
    def __init__(self, fin: int, fout: int):
        self.weight = _param((fout, fin))
        self.bias = _param((fout,))

    def reset(self, rng):
        self.weight.data = _kaiming_uniform(rng, self.weight.shape, self.weight.shape[1])
        self.bias.data = np.zeros(self.weight.shape[0], dtype=np.float32)

    def __call__(self, x):
        return F.linear(x, self.weight, self.bias)


# -- render branch -------------------------------------------------------------

@dataclass
class RegressorConfig:
    widths: tuple[int, ...] = (16, 32, 64, 128)
    blocks_per_stage: int = 2
    out_dim: int = N_COEFFS

    def __post_init__(self):
        if self.out_dim != N_COEFFS:
            raise ValueError(f"regressor output must have {N_COEFFS} units, got {self.out_dim}")


class BasicBlock(Module):
    def __init__(self, cin: int, cout: int, downsample: bool):
        self.downsample = downsample
        self.conv1 = Conv2d(cin, cout)
        self.conv2 = Conv2d(cout, cout)
        self.shortcut = Conv2d(cin, cout, k=1) if cin != cout else None

    def __call__(self, x):
        if self.downsample:
            x = F.avg_pool2d(x, 2)
        h = self.conv2(T.relu(self.conv1(x)))
        skip = self.shortcut(x) if self.shortcut is not None else x
        return T.relu(h + skip)


class FinalLinear(Linear):
    """Output layer: near-zero weights, bias at the neutral coefficient vector."""

    def reset(self, rng):
        fin = self.weight.shape[1]
        self.weight.data = (0.01 * _kaiming_uniform(rng, self.weight.shape, fin)).astype(np.float32)
        self.bias.data = neutral_coefficients()


class CoefficientRegressor(Module):
    """Residual CNN mapping a 16x16 or 32x32 RGB face to 239 coefficients."""

    def __init__(self, config: RegressorConfig = RegressorConfig()):
        self.config = config
        w = config.widths
        self.stem = Conv2d(3, w[0])
        self.blocks: list[BasicBlock] = []
        cin = w[0]
        for si, width in enumerate(w):
            for bi in range(config.blocks_per_stage):
                self.blocks.append(BasicBlock(cin, width, downsample=(si > 0 and bi == 0)))
                cin = width
        self.fc = FinalLinear(cin, config.out_dim)

    def __call__(self, x) -> Tensor:
        x = T._wrap(x)
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] not in (16, 32) or x.shape[2] != x.shape[3]:
            raise DimensionError(f"regressor expects (N, 3, s, s) with s in {{16, 32}}, got {x.shape}")
        h = T.relu(self.stem(x))
        for blk in self.blocks:
            h = blk(h)
        pooled = T.reshape(F.global_avg_pool(h), (h.shape[0], h.shape[1]))
        return self.fc(pooled)


def regress_coefficients(lr_image, regressor: CoefficientRegressor) -> FaceCoefficients:
    """One (3, s, s) image -> split coefficient vector."""
    x = T._wrap(lr_image)
    if x.ndim == 3:
        x = T.reshape(x, (1,) + x.shape)
    out = regressor(x)
    return FaceCoefficients.split(T.reshape(out[0:1], (N_COEFFS,)))


# -- SR branch ---------------------------------------------------------------

@dataclass
class SamConfig:
    channels: int = 64
    rcab_count: int = 8
    reduction: int = 16
    scale: int = 8
    prior_channels: int = 7
    sft_count: int = 2
    use_prior: bool = True
    use_sam: bool = True

    def __post_init__(self):
        if self.scale not in (4, 8):
            raise ValueError(f"unsupported scale {self.scale}; expected 4 or 8")
        if self.channels % self.reduction:
            raise ValueError(f"reduction {self.reduction} must divide channels {self.channels}")
        if self.sft_count not in (1, 2):
            raise ValueError("sft_count must be 1 or 2")

    @property
    def upscale_stages(self) -> int:
        return int(math.log2(self.scale))


def sft_modulate(features, mu, nu) -> Tensor:
    """``mu * F + nu`` elementwise; all three must share a shape."""
    features, mu, nu = T._wrap(features), T._wrap(mu), T._wrap(nu)
    if not (features.shape == mu.shape == nu.shape):
        raise DimensionError(f"sft_modulate: shapes differ: F {features.shape}, mu {mu.shape}, nu {nu.shape}")
    return mu * features + nu


class SFTCondition(Module):
    """Maps a prior stack to a per-position scale/shift pair; starts at identity."""

    def __init__(self, prior_channels: int, channels: int):
        self.trunk1 = Conv2d(prior_channels, channels)
        self.trunk2 = Conv2d(channels, channels)
        self.mu_head = _IdentityHead(channels, channels, fill=1.0)
        self.nu_head = _IdentityHead(channels, channels, fill=0.0)

    def __call__(self, prior) -> tuple[Tensor, Tensor]:
        h = T.relu(self.trunk2(T.relu(self.trunk1(prior))))
        return self.mu_head(h), self.nu_head(h)


class _IdentityHead(Conv2d):
    def __init__(self, cin, cout, fill: float):
        super().__init__(cin, cout, k=1)
        self.fill = fill

    def reset(self, rng):
        self.weight.data = np.zeros(self.weight.shape, dtype=np.float32)
        self.bias.data = np.full(self.bias.shape, self.fill, dtype=np.float32)


def sft_condition(prior, cond: SFTCondition, feature_shape=None) -> tuple[Tensor, Tensor]:
    prior = T._wrap(prior)
    if feature_shape is not None and tuple(prior.shape[2:]) != tuple(feature_shape[2:]):
        raise DimensionError(f"prior spatial size {prior.shape[2:]} != feature size {tuple(feature_shape[2:])}")
    return cond(prior)


class RCAB(Module):
    """Residual block whose branch is gated per channel (squeeze-and-excite)."""

    def __init__(self, channels: int, reduction: int, attention: bool = True):
        self.conv1 = Conv2d(channels, channels)
        self.conv2 = Conv2d(channels, channels)
        self.attention = attention
        if attention:
            self.ca_down = Linear(channels, channels // reduction)
            self.ca_up = Linear(channels // reduction, channels)

    def __call__(self, x) -> Tensor:
        x = T._wrap(x)
        if x.shape[1] != self.conv1.weight.shape[1]:
            raise DimensionError(f"RCAB expects {self.conv1.weight.shape[1]} channels, got {x.shape[1]}")
        branch = self.conv2(T.relu(self.conv1(x)))
        if not self.attention:
            return x + branch
        n, c = branch.shape[:2]
        squeezed = T.reshape(F.global_avg_pool(branch), (n, c))
        gate = T.sigmoid(self.ca_up(T.relu(self.ca_down(squeezed))))
        return x + branch * T.reshape(gate, (n, c, 1, 1))


def rcab_forward(features, block: RCAB) -> Tensor:
    return block(features)


def rcab_param_count(channels: int, reduction: int) -> int:
    hidden = channels // reduction
    return 2 * (9 * channels * channels + channels) + (channels * hidden + hidden) + (hidden * channels + channels)


class Upscale(Module):
    def __init__(self, channels: int, scale: int):
        if scale not in (4, 8):
            raise ValueError(f"unsupported scale {scale}; expected 4 or 8")
        self.stages = [ConvTranspose2d(channels, channels) for _ in range(int(math.log2(scale)))]
        self.to_rgb = Conv2d(channels, 3)

    def __call__(self, x, train: bool = True) -> Tensor:
        for st in self.stages:
            x = T.relu(st(x))
        out = self.to_rgb(x)
        if not train:
            out = T.clamp(out, 0.0, 1.0)
        return out


def upscale_forward(features, block: Upscale, train: bool = True) -> Tensor:
    return block(features, train)


class SAMNet(Module):
    """Head conv -> SFT -> RCAB chain -> SFT -> progressive upscale.

    With ``use_prior=False`` the SFT layers are absent (identical to frozen
    identity modulation). With ``use_sam=False`` the SFT layers and channel
    attention are dropped and the prior, if used, is concatenated to the
    input image instead.
    """

    def __init__(self, config: SamConfig = SamConfig()):
        self.config = config
        c = config.channels
        in_ch = 3
        if config.use_prior and not config.use_sam:
            in_ch += config.prior_channels
        self.head = Conv2d(in_ch, c)
        self.sft_in = None
        self.sft_out = None
        if config.use_prior and config.use_sam:
            self.sft_in = SFTCondition(config.prior_channels, c)
            if config.sft_count == 2:
                self.sft_out = SFTCondition(config.prior_channels, c)
        self.body = [RCAB(c, config.reduction, attention=config.use_sam) for _ in range(config.rcab_count)]
        self.upscale = Upscale(c, config.scale)

    def prior_parameter_names(self) -> list[str]:
        return [k for k in self.named_parameters() if k.startswith(("sft_in.", "sft_out."))]

    def __call__(self, lr, prior=None, train: bool = True) -> Tensor:
        lr = T._wrap(lr)
        cfg = self.config
        if cfg.use_prior:
            if prior is None:
                raise ValueError("this network was built with priors; pass a prior stack")
            prior = T._wrap(prior.channels if hasattr(prior, "channels") else prior)
            if prior.ndim == 3:
                prior = T.reshape(prior, (1,) + prior.shape)
            if prior.shape[2:] != lr.shape[2:]:
                raise DimensionError(f"prior spatial size {prior.shape[2:]} != input size {lr.shape[2:]}")
        x = lr
        if cfg.use_prior and not cfg.use_sam:
            x = T.concat([lr, prior], axis=1)
        feat = self.head(x)
        if self.sft_in is not None:
            mu, nu = self.sft_in(prior)
            feat = sft_modulate(feat, mu, nu)
        for blk in self.body:
            feat = blk(feat)
        if self.sft_out is not None:
            mu, nu = self.sft_out(prior)
            feat = sft_modulate(feat, mu, nu)
        return self.upscale(feat, train)


def sam_forward(lr_image, prior, net: SAMNet, train: bool = False) -> Tensor:
    return net(lr_image, prior, train)
