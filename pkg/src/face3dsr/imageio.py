"""8-bit RGB PNG read/write. Arrays are float32 (H, W, 3) in [0, 1]."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, img: np.ndarray) -> None:
    arr = np.asarray(img)
    if arr.ndim == 3 and arr.shape[0] == 3 and arr.shape[2] != 3:
        arr = np.transpose(arr, (1, 2, 0))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(arr), mode="RGB").save(path)


def write_ply(path, vertices: np.ndarray, triangles: np.ndarray, colors: np.ndarray | None = None) -> None:
    """ASCII PLY mesh with optional per-vertex colours in [0, 1]."""
    v = np.asarray(vertices).reshape(-1, 3)
    t = np.asarray(triangles).reshape(-1, 3)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(v)}",
             "property float x", "property float y", "property float z"]
    if colors is not None:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines += [f"element face {len(t)}", "property list uchar int vertex_indices", "end_header"]
    c8 = to_uint8(np.asarray(colors).reshape(-1, 3)) if colors is not None else None
    for i, p in enumerate(v):
        row = f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f}"
        if c8 is not None:
            row += " {} {} {}".format(*c8[i])
        lines.append(row)
    lines += [f"3 {a} {b} {c}" for a, b, c in t]
    Path(path).write_text("\n".join(lines) + "\n")
