"""``face3dsr`` command line.

Every command prints ``key=value`` lines on stdout. Exit codes: 0 success,
1 failed check, 2 bad configuration or usage, 3 data/checkpoint error,
4 numeric abort (non-finite loss or gradient).
"""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, TrainConfig
from .data import DataError, PngDirectoryDataset, SyntheticFaceDataset, sample_coefficients, split
from .imageio import read_png, write_png, write_ply
from .metrics import MetricReport
from .morphable import N_COEFFS, FaceBasis, generate_basis, neutral_coefficients, pose_mesh
from .optim import NonFiniteGradientError
from .priors import DegenerateMaskError
from .raster import Camera, render

EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
VAL_SEED_OFFSET = 1_000_003

log = logging.getLogger("face3dsr")


def emit(**kv) -> None:
    for k, v in kv.items():
        if isinstance(v, float):
            v = f"{v:.6g}"
        print(f"{k}={v}")


# -- helpers -------------------------------------------------------------------

def _load_config(path) -> TrainConfig:
    if path is None:
        raise ConfigError("--config is required")
    return TrainConfig.load(path)


def _datasets(config: TrainConfig):
    if config.data_dir:
        samples = list(PngDirectoryDataset(config.data_dir, config.scale))
        return split(samples, (0.8, 0.2), config.seed)
    train = SyntheticFaceDataset(config.n_train, seed=config.seed, scale=config.scale)
    val = SyntheticFaceDataset(config.n_val, seed=config.seed + VAL_SEED_OFFSET, scale=config.scale) if config.n_val else []
    return list(train), list(val)


def _load_basis(path) -> FaceBasis:
    if path is None:
        return generate_basis()
    ckpt = load_checkpoint(path)
    try:
        return FaceBasis.from_tensors(ckpt.tensors)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path} does not hold a face basis: {exc}") from exc


def _read_coeffs(path) -> np.ndarray:
    try:
        x = np.loadtxt(path, dtype=np.float64).reshape(-1)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read coefficients from {path}: {exc}") from exc
    if x.size != N_COEFFS:
        raise DataError(f"{path}: expected {N_COEFFS} coefficients, found {x.size}")
    return x.astype(np.float32)


def _epoch_printer(epoch: int, loss: float) -> None:
    print(f"epoch={epoch} loss={loss:.6f}", flush=True)


# -- commands ------------------------------------------------------------------

def cmd_gen_basis(args) -> int:
    basis = generate_basis(rings=args.rings, segments=args.segments, seed=args.seed)
    meta = {"kind": "basis", "rings": args.rings, "segments": args.segments, "seed": args.seed}
    save_checkpoint(args.out, Checkpoint(basis.to_tensors(), meta))
    if args.ply:
        mesh = pose_mesh(basis, neutral_coefficients())
        write_ply(args.ply, basis.mean_shape, basis.triangles, mesh.colors.data)
    emit(vertices=basis.n_vertices, triangles=len(basis.triangles), out=args.out)
    return 0


def cmd_render(args) -> int:
    basis = _load_basis(args.basis)
    if args.coeffs:
        coeffs = _read_coeffs(args.coeffs)
    elif args.seed is not None:
        coeffs = sample_coefficients(np.random.default_rng(args.seed))
    else:
        coeffs = neutral_coefficients()
    out = render(basis, coeffs, Camera())
    write_png(args.out, out.rgb)
    if args.ply:
        mesh = pose_mesh(basis, coeffs)
        write_ply(args.ply, mesh.vertices.data, basis.triangles, mesh.colors.data)
    emit(out=args.out, width=out.rgb.shape[1], height=out.rgb.shape[0], covered_pixels=int(out.face_mask.sum()),
         degenerate=out.degenerate, behind_camera=out.behind)
    return 0


def cmd_train_render(args) -> int:
    from .train import train_render

    config = _load_config(args.config)
    epochs = args.epochs if args.epochs is not None else config.epochs
    train, _ = _datasets(config)
    resume = load_checkpoint(args.resume) if args.resume else None
    result = train_render(train, epochs, config, resume=resume, checkpoint_path=args.out, on_epoch=_epoch_printer)
    emit(out=args.out, epochs=epochs, final_loss=result.epoch_losses[-1] if result.epoch_losses else float("nan"),
         config_hash=config.digest())
    return 0


def cmd_train_sr(args) -> int:
    from .train import train_sr

    config = _load_config(args.config)
    epochs = args.epochs if args.epochs is not None else config.epochs
    train, val = _datasets(config)
    render_ckpt = load_checkpoint(args.render_ckpt) if args.render_ckpt else None
    resume = load_checkpoint(args.resume) if args.resume else None
    result = train_sr(train, val, render_ckpt, epochs, config, resume=resume, checkpoint_path=args.out,
                      on_epoch=_epoch_printer)
    emit(out=args.out, epochs=epochs, final_loss=result.epoch_losses[-1] if result.epoch_losses else float("nan"),
         val_psnr=result.val_psnr if result.val_psnr is not None else float("nan"),
         no_prior=str(config.no_prior).lower(), no_sam=str(config.no_sam).lower(), config_hash=config.digest())
    return 0


def cmd_super_resolve(args) -> int:
    from .train import super_resolve

    ckpt = load_checkpoint(args.ckpt)
    scale = int(ckpt.metadata.get("scale", 0))
    if ckpt.metadata.get("kind") != "sr":
        raise CheckpointError(f"{args.ckpt} is not an SR checkpoint")
    if args.scale is not None and args.scale != scale:
        raise ConfigError(f"--scale {args.scale} does not match the checkpoint's scale {scale}")
    try:
        img = read_png(args.input)
    except OSError as exc:
        raise DataError(f"cannot read {args.input}: {exc}") from exc
    expected = 128 // scale
    if img.shape[:2] != (expected, expected):
        raise DataError(f"input is {img.shape[1]}x{img.shape[0]}; a x{scale} model takes {expected}x{expected}")
    out = super_resolve(np.ascontiguousarray(np.transpose(img, (2, 0, 1))), ckpt)
    write_png(args.out, out)
    emit(out=args.out, scale=scale, width=out.shape[2], height=out.shape[1])
    return 0


def _pngs(directory) -> dict[str, Path]:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"{directory} is not a directory")
    return {p.name: p for p in d.glob("*.png")}


def cmd_evaluate(args) -> int:
    pred, gt = _pngs(args.pred), _pngs(args.gt)
    if not gt:
        raise DataError(f"no PNG files in {args.gt}")
    missing = sorted(gt.keys() - pred.keys())
    if missing:
        raise DataError(f"{len(missing)} ground-truth images lack a prediction, e.g. {missing[0]}")

    def load(name):
        try:
            a, b = read_png(pred[name]), read_png(gt[name])
        except OSError as exc:
            raise DataError(f"cannot read {name}: {exc}") from exc
        if a.shape != b.shape:
            raise DataError(f"{name}: prediction {a.shape} and ground truth {b.shape} differ in size")
        return name, a, b

    report = MetricReport(metadata={"pred_dir": args.pred, "gt_dir": args.gt})
    with ThreadPoolExecutor(max(1, args.workers)) as pool:
        for name, a, b in pool.map(load, sorted(gt)):
            report.add(name, a, b)
    for line in report.lines():
        print(line)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite

    def show(r):
        print(f"case={r.name} max_rel_error={r.max_rel_error:.3e} tol={r.tol:g} seeds={r.seeds} "
              f"rejected={r.rejected} passed={str(r.passed).lower()}", flush=True)

    results = run_suite(args.seeds, names=args.case or None, progress=show)
    if not results:
        raise ConfigError(f"no gradient case named {args.case}")
    worst = max(r.max_rel_error / r.tol for r in results)
    ok = all(r.passed for r in results)
    emit(cases=len(results), worst_error_over_tol=worst, seconds=sum(r.seconds for r in results),
         passed=str(ok).lower())
    return 0 if ok else EXIT_FAILED


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="face3dsr", description="3D-prior face super-resolution toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-basis", help="write the synthetic morphable basis")
    s.add_argument("--out", required=True)
    s.add_argument("--rings", type=int, default=13)
    s.add_argument("--segments", type=int, default=37)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--ply", help="also write the mean face as a PLY mesh")
    s.set_defaults(func=cmd_gen_basis)

    s = sub.add_parser("render", help="render a face from coefficients")
    s.add_argument("--out", required=True)
    s.add_argument("--basis", help="basis file from gen-basis (default: built-in)")
    s.add_argument("--coeffs", help="text file with 239 coefficients")
    s.add_argument("--seed", type=int, help="draw random coefficients with this seed")
    s.add_argument("--ply", help="also write the posed mesh as a PLY file")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("train-render", help="train the coefficient regressor")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--resume")
    s.add_argument("--epochs", type=int)
    s.set_defaults(func=cmd_train_render)

    s = sub.add_parser("train-sr", help="train the super-resolution network")
    s.add_argument("--config", required=True)
    s.add_argument("--render-ckpt", help="render-branch checkpoint (required unless no_prior)")
    s.add_argument("--out", required=True)
    s.add_argument("--resume")
    s.add_argument("--epochs", type=int)
    s.set_defaults(func=cmd_train_sr)

    s = sub.add_parser("super-resolve", help="upscale one LR PNG")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--scale", type=int, choices=(4, 8))
    s.set_defaults(func=cmd_super_resolve)

    s = sub.add_parser("evaluate", help="PSNR/SSIM of predictions against ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--workers", type=int, default=4)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    s.add_argument("--seeds", type=int, default=20)
    s.add_argument("--case", action="append", help="restrict to a named case (repeatable)")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    from .train import NumericAbort

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericAbort as exc:
        out = getattr(args, "out", None)
        if out and exc.last_good is not None:
            save_checkpoint(out, exc.last_good)
            emit(last_good=out)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (NonFiniteGradientError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, DegenerateMaskError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
