"""Adam with bias correction, and the step-decay learning-rate schedule."""
from __future__ import annotations

from typing import Mapping

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str, bad: int, total: int):
        super().__init__(f"non-finite gradient in {name!r}: {bad} of {total} entries are NaN/Inf")
        self.name = name


def step_lr(epoch: int, base_lr: float = 2e-4, step: int = 50, factor: float = 0.5) -> float:
    """Learning rate for a 0-based epoch: halved every ``step`` epochs by default."""
    return base_lr * factor ** (epoch // step)


class Adam:
    def __init__(self, params: Mapping[str, Tensor], lr: float = 2e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                bad = int((~np.isfinite(p.grad)).sum())
                raise NonFiniteGradientError(name, bad, p.grad.size)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            mhat = m / c1
            vhat = v / c2
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for k in self.params:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    def load_state_dict(self, tensors: Mapping[str, np.ndarray], t: int) -> None:
        for k, p in self.params.items():
            for slot, store in (("m", self.m), ("v", self.v)):
                arr = tensors[f"adam.{slot}.{k}"]
                if arr.shape != p.shape:
                    raise ValueError(f"optimizer state adam.{slot}.{k} has shape {arr.shape}, expected {p.shape}")
                store[k] = np.array(arr, dtype=p.data.dtype)
        self.t = int(t)
