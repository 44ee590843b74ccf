"""Central finite-difference gradient checking in float64.

The function under test is evaluated on fresh float64 tensors; the scalar
probed is ``sum(f(inputs) * R)`` for a fixed random projection ``R``. Each
finite difference is only trusted when the perturbed forward passes take the
same branch of every relu/clamp/abs as the unperturbed one; a perturbation
that crosses a kink makes the trial invalid and the caller draws another
seed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, record_kinks, shadow64

REL_FLOOR = 1e-3


class KinkCrossed(Exception):
    """A finite-difference step crossed a non-differentiable point."""


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_input: list[float] = field(default_factory=list)

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_gradients(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    h: float = 1e-3,
    seed: int = 0,
    wrt: Sequence[int] | None = None,
    max_entries: int | None = None,
) -> GradCheckResult:
    """Compare backprop gradients of ``fn`` with central differences.

    ``fn`` receives float64 :class:`Tensor` objects (``requires_grad`` set on
    the ones listed in ``wrt``) and returns a Tensor. ``max_entries`` limits
    how many coordinates per input are probed (randomly chosen).
    Raises :class:`KinkCrossed` if any probe crosses a kink.
    """
    rng = np.random.default_rng(seed)
    base = [np.array(x, dtype=np.float64) for x in inputs]
    wrt = list(range(len(base))) if wrt is None else list(wrt)

    with shadow64():
        with record_kinks() as kinks0:
            ts = [Tensor(x, requires_grad=(i in wrt)) for i, x in enumerate(base)]
            out = fn(*ts)
        proj = rng.standard_normal(out.shape)
        loss = (out * Tensor(proj)).sum()
        loss.backward()
        analytic = [ts[i].grad if ts[i].grad is not None else np.zeros_like(base[i]) for i in wrt]
        pattern0 = [k.copy() for k in kinks0]

        def scalar(values: list[np.ndarray]) -> float:
            with record_kinks() as kinks:
                o = fn(*[Tensor(v) for v in values])
            if len(kinks) != len(pattern0) or any(
                a.shape != b.shape or not np.array_equal(a, b) for a, b in zip(kinks, pattern0)
            ):
                raise KinkCrossed()
            return float((o.data * proj).sum())

        per_input = []
        for slot, i in enumerate(wrt):
            flat = base[i].reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = rng.choice(flat.size, size=max_entries, replace=False)
            numeric = np.empty(idx.size)
            for j, e in enumerate(idx):
                vals = [b.copy() for b in base]
                vals[i].reshape(-1)[e] += h
                fp = scalar(vals)
                vals[i].reshape(-1)[e] -= 2 * h
                fm = scalar(vals)
                numeric[j] = (fp - fm) / (2 * h)
            per_input.append(rel_error(analytic[slot].reshape(-1)[idx], numeric))
    return GradCheckResult(max(per_input) if per_input else 0.0, per_input)


def check_over_seeds(
    make_case: Callable[[np.random.Generator], tuple[Callable[..., Tensor], Sequence[np.ndarray]]],
    n_seeds: int = 20,
    h: float = 1e-3,
    max_entries: int | None = None,
    max_attempts: int | None = None,
) -> tuple[float, int, int]:
    """Run :func:`check_gradients` on ``n_seeds`` kink-free random cases.

    Returns ``(max_rel_error, seeds_checked, seeds_rejected)``.
    """
    worst = 0.0
    checked = rejected = 0
    seed = 0
    limit = max_attempts or 5 * n_seeds
    while checked < n_seeds:
        if checked + rejected >= limit:
            raise RuntimeError(f"only {checked} kink-free seeds in {limit} attempts")
        fn, inputs = make_case(np.random.default_rng(seed))
        try:
            res = check_gradients(fn, inputs, h=h, seed=seed, max_entries=max_entries)
        except KinkCrossed:
            rejected += 1
        else:
            worst = max(worst, res.max_rel_error)
            checked += 1
        seed += 1
    return worst, checked, rejected
