"""Training loops for the render branch and the SR network, plus inference helpers.

Both loops are deterministic for a fixed seed: parameter init is keyed by
layer name, and each epoch's sample order comes from ``default_rng([seed,
epoch])``, so a run resumed from a checkpoint replays the same batches.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, CheckpointError, save_checkpoint
from .config import TrainConfig
from .metrics import MetricReport
from .morphable import FaceBasis, generate_basis
from .networks import CoefficientRegressor, RegressorConfig, SAMNet, SamConfig
from .optim import Adam, NonFiniteGradientError, step_lr
from .priors import PriorStack, SkinModel, build_prior_stack, rendering_loss, skin_mask
from .raster import Camera, render
from .tensor import Tensor

log = logging.getLogger(__name__)

PROTOCOL_BATCH = 64  # batch size of the reference training protocol
BASIS_DEFAULTS = {"rings": 13, "segments": 37, "seed": 0}


class NumericAbort(FloatingPointError):
    """Loss became non-finite; ``last_good`` holds the last finite-epoch checkpoint."""

    def __init__(self, message: str, last_good: Checkpoint | None):
        super().__init__(message)
        self.last_good = last_good


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    epoch_losses: list[float] = field(default_factory=list)
    val_psnr: float | None = None


def make_batches(n: int, batch_size: int = PROTOCOL_BATCH, rng: np.random.Generator | None = None) -> list[np.ndarray]:
    """Split ``range(n)`` (shuffled if ``rng`` is given) into consecutive batches."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def basis_from_metadata(meta: dict) -> FaceBasis:
    b = meta.get("basis", BASIS_DEFAULTS)
    return generate_basis(rings=b["rings"], segments=b["segments"], seed=b["seed"])


def load_module(ckpt: Checkpoint, module, prefix: str) -> None:
    ckpt.load_into(module, prefix)


def _optimizer_tensors(opt: Adam, prefix: str) -> dict[str, np.ndarray]:
    return {prefix + k: v.copy() for k, v in opt.state_dict().items()}


def _restore_optimizer(opt: Adam, ckpt: Checkpoint, prefix: str, t: int) -> None:
    opt.load_state_dict(ckpt.subset(prefix), t)


def _step(opt: Adam, epoch: int, last_good: Checkpoint) -> None:
    try:
        opt.step()
    except NonFiniteGradientError as exc:
        raise NumericAbort(f"{exc} at epoch {epoch}", last_good) from exc


def _regressor(config: TrainConfig) -> CoefficientRegressor:
    return CoefficientRegressor(RegressorConfig(widths=tuple(config.regressor_widths))).initialize(config.seed)


def regressor_from_checkpoint(ckpt: Checkpoint) -> CoefficientRegressor:
    widths = tuple(ckpt.metadata.get("config", {}).get("regressor_widths", (16, 32, 64, 128)))
    reg = CoefficientRegressor(RegressorConfig(widths=widths))
    load_module(ckpt, reg, "regressor.")
    return reg


# -- render branch -------------------------------------------------------------

def render_batch_loss(reg: CoefficientRegressor, basis: FaceBasis, camera: Camera, lr: np.ndarray,
                      sharp: np.ndarray, attention: np.ndarray) -> Tensor:
    """Skin-weighted rendering loss of one batch. ``sharp`` is (B, H, W, 3)."""
    coeffs = reg(Tensor(lr))
    images, masks = [], []
    for j in range(lr.shape[0]):
        out = render(basis, coeffs[j], camera)
        images.append(out.image)
        masks.append(out.face_mask)
    return rendering_loss(sharp, T.stack(images), attention, np.stack(masks))


def train_render(dataset: Sequence, epochs: int, config: TrainConfig, basis: FaceBasis | None = None,
                 camera: Camera = Camera(), skin_model: SkinModel | None = None,
                 resume: Checkpoint | None = None, checkpoint_path=None,
                 on_epoch: Callable[[int, float], None] | None = None) -> TrainResult:
    """Fit the coefficient regressor by minimising the skin-weighted rendering loss."""
    samples = list(dataset)
    if not samples:
        raise ValueError("dataset is empty")
    basis = basis if basis is not None else generate_basis(**BASIS_DEFAULTS)
    skin_model = skin_model or SkinModel.load(config.skin_model_path or None)
    lr_imgs = np.stack([s.lr for s in samples])
    sharp = np.stack([s.hr_hwc for s in samples])
    attention = np.stack([skin_mask(s.hr_hwc, skin_model) for s in samples])

    reg = _regressor(config)
    opt = Adam(reg.named_parameters(), lr=config.lr)
    start, history = 0, []
    if resume is not None:
        load_module(resume, reg, "regressor.")
        _restore_optimizer(opt, resume, "opt.", resume.metadata["adam_t"])
        start = int(resume.metadata["epoch"])
        history = list(resume.metadata.get("epoch_losses", []))

    def snapshot(epoch: int) -> Checkpoint:
        tensors = {"regressor." + k: v for k, v in reg.state_dict().items()}
        tensors.update(_optimizer_tensors(opt, "opt."))
        meta = {"kind": "render", "epoch": epoch, "lr": opt.lr, "seed": config.seed,
                "config_hash": config.digest(), "config": _jsonable(config), "adam_t": opt.t,
                "epoch_losses": list(history), "basis": BASIS_DEFAULTS}
        return Checkpoint(tensors, meta)

    last_good = snapshot(start)
    for epoch in range(start, epochs):
        opt.lr = step_lr(epoch, config.lr, config.lr_step)
        losses = []
        for idx in make_batches(len(samples), config.batch, np.random.default_rng([config.seed, epoch])):
            loss = render_batch_loss(reg, basis, camera, lr_imgs[idx], sharp[idx], attention[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise NumericAbort(f"non-finite render loss at epoch {epoch}", last_good)
            opt.zero_grad()
            loss.backward()
            _step(opt, epoch, last_good)
            losses.append(value)
        history.append(float(np.mean(losses)))
        log.info("render epoch %d lr %.3g loss %.6f", epoch, opt.lr, history[-1])
        last_good = snapshot(epoch + 1)
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, last_good)
        if on_epoch:
            on_epoch(epoch, history[-1])
    return TrainResult(last_good, history)


# -- SR branch -----------------------------------------------------------------

def compute_priors(reg: CoefficientRegressor, basis: FaceBasis, camera: Camera, lr_imgs: np.ndarray,
                   lr_size: int) -> np.ndarray:
    """(N, 7, s, s) prior stacks from the (frozen) render branch."""
    with T.no_grad():
        coeffs = reg(Tensor(lr_imgs)).data
    stacks = [build_prior_stack(render(basis, c, camera), c, lr_size).channels for c in coeffs]
    return np.stack(stacks)


def sam_config(config: TrainConfig) -> SamConfig:
    return SamConfig(channels=config.channels, rcab_count=config.rcab_count, reduction=config.reduction,
                     scale=config.scale, use_prior=not config.no_prior, use_sam=not config.no_sam)


def sam_from_checkpoint(ckpt: Checkpoint, config: TrainConfig | None = None) -> SAMNet:
    """Rebuild the SR network; with ``config`` the checkpoint is checked against it."""
    if config is None:
        config = TrainConfig.from_mapping({k: _to_str(v) for k, v in ckpt.metadata.get("config", {}).items()
                                           if k != "hr_size"})
    net = SAMNet(sam_config(config))
    load_module(ckpt, net, "sam.")
    return net


def evaluate_sr(net: SAMNet, samples: Sequence, priors: np.ndarray | None) -> MetricReport:
    report = MetricReport()
    with T.no_grad():
        for i, s in enumerate(samples):
            prior = None if priors is None else priors[i:i + 1]
            out = net(Tensor(s.lr[None]), prior, train=False).data[0]
            report.add(s.name or str(i), out, s.hr)
    return report


def train_sr(train_set: Sequence, val_set: Sequence, render_ckpt: Checkpoint | None, epochs: int,
             config: TrainConfig, basis: FaceBasis | None = None, camera: Camera = Camera(),
             resume: Checkpoint | None = None, checkpoint_path=None, skin_model: SkinModel | None = None,
             on_epoch: Callable[[int, float], None] | None = None) -> TrainResult:
    """Train the SR network with an L1 pixel loss, conditioned on render-branch priors."""
    train_samples, val_samples = list(train_set), list(val_set)
    if not train_samples:
        raise ValueError("training set is empty")
    use_prior = not config.no_prior
    basis = basis if basis is not None else generate_basis(**BASIS_DEFAULTS)
    lr_imgs = np.stack([s.lr for s in train_samples])
    hr_imgs = np.stack([s.hr for s in train_samples])
    if lr_imgs.shape[-1] != config.lr_size:
        raise ValueError(f"dataset LR size {lr_imgs.shape[-1]} does not match scale {config.scale}")

    reg = None
    reg_opt = None
    if use_prior:
        if render_ckpt is None:
            raise CheckpointError("a render-branch checkpoint is required unless no_prior is set")
        reg = regressor_from_checkpoint(render_ckpt)

    net = SAMNet(sam_config(config)).initialize(config.seed)
    opt = Adam(net.named_parameters(), lr=config.lr)
    if use_prior and config.joint:
        skin_model = skin_model or SkinModel.load(config.skin_model_path or None)
        attention = np.stack([skin_mask(s.hr_hwc, skin_model) for s in train_samples])
        sharp = np.stack([s.hr_hwc for s in train_samples])
        reg_opt = Adam(reg.named_parameters(), lr=config.lr)

    start, history = 0, []
    if resume is not None:
        load_module(resume, net, "sam.")
        _restore_optimizer(opt, resume, "opt.", resume.metadata["adam_t"])
        if reg_opt is not None:
            load_module(resume, reg, "regressor.")
            _restore_optimizer(reg_opt, resume, "regopt.", resume.metadata["reg_adam_t"])
        start = int(resume.metadata["epoch"])
        history = list(resume.metadata.get("epoch_losses", []))

    priors = compute_priors(reg, basis, camera, lr_imgs, config.lr_size) if use_prior else None
    val_priors = None
    if use_prior and val_samples:
        val_priors = compute_priors(reg, basis, camera, np.stack([s.lr for s in val_samples]), config.lr_size)

    def snapshot(epoch: int, val_psnr=None) -> Checkpoint:
        tensors = {"sam." + k: v for k, v in net.state_dict().items()}
        tensors.update(_optimizer_tensors(opt, "opt."))
        meta = {"kind": "sr", "epoch": epoch, "lr": opt.lr, "seed": config.seed, "config_hash": config.digest(),
                "config": _jsonable(config), "adam_t": opt.t, "epoch_losses": list(history),
                "basis": BASIS_DEFAULTS, "scale": config.scale}
        if reg is not None:
            tensors.update({"regressor." + k: v for k, v in reg.state_dict().items()})
        if reg_opt is not None:
            tensors.update(_optimizer_tensors(reg_opt, "regopt."))
            meta["reg_adam_t"] = reg_opt.t
        if val_psnr is not None:
            meta["val_psnr"] = val_psnr
        return Checkpoint(tensors, meta)

    last_good = snapshot(start)
    for epoch in range(start, epochs):
        opt.lr = step_lr(epoch, config.lr, config.lr_step)
        if reg_opt is not None:
            reg_opt.lr = opt.lr
        losses = []
        for idx in make_batches(len(train_samples), config.batch, np.random.default_rng([config.seed, epoch])):
            if reg_opt is not None:
                rloss = render_batch_loss(reg, basis, camera, lr_imgs[idx], sharp[idx], attention[idx])
                reg_opt.zero_grad()
                rloss.backward()
                _step(reg_opt, epoch, last_good)
                batch_prior = compute_priors(reg, basis, camera, lr_imgs[idx], config.lr_size)
            else:
                batch_prior = priors[idx] if priors is not None else None
            out = net(Tensor(lr_imgs[idx]), batch_prior, train=True)
            loss = T.mean(T.absolute(out - Tensor(hr_imgs[idx])))
            value = loss.item()
            if not math.isfinite(value):
                raise NumericAbort(f"non-finite SR loss at epoch {epoch}", last_good)
            opt.zero_grad()
            loss.backward()
            _step(opt, epoch, last_good)
            losses.append(value)
        history.append(float(np.mean(losses)))
        log.info("sr epoch %d lr %.3g loss %.6f", epoch, opt.lr, history[-1])
        last_good = snapshot(epoch + 1)
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, last_good)
        if on_epoch:
            on_epoch(epoch, history[-1])

    if reg_opt is not None and val_samples:
        val_priors = compute_priors(reg, basis, camera, np.stack([s.lr for s in val_samples]), config.lr_size)
    val_psnr = evaluate_sr(net, val_samples, val_priors).mean_psnr if val_samples else None
    final = snapshot(max(start, epochs), val_psnr)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, final)
    return TrainResult(final, history, val_psnr)


def super_resolve(lr_image: np.ndarray, sr_ckpt: Checkpoint, camera: Camera = Camera()) -> np.ndarray:
    """(3, s, s) LR image -> (3, 128, 128) prediction in [0, 1]."""
    net = sam_from_checkpoint(sr_ckpt)
    prior = None
    if net.config.use_prior:
        reg = regressor_from_checkpoint(sr_ckpt)
        prior = compute_priors(reg, basis_from_metadata(sr_ckpt.metadata), camera, lr_image[None], lr_image.shape[-1])
    with T.no_grad():
        return net(Tensor(lr_image[None]), prior, train=False).data[0]


def _jsonable(config: TrainConfig) -> dict:
    d = config.to_mapping()
    d["regressor_widths"] = list(d["regressor_widths"])
    return d


def _to_str(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return str(v)
