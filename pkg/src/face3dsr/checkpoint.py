"""Named-tensor archive: a text manifest followed by a raw little-endian blob.

Layout::

    FACE3DSR-CKPT\\n
    version 1\\n
    manifest <n>\\n
    <n bytes of JSON: {"metadata": {...}, "blob_bytes": B,
                       "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}>
    <B bytes of tensor data>

``dtype`` is ``f4`` (float32) or ``i4`` (int32). The manifest is validated
in full before any tensor data is read. Writes go to a temporary file that
is renamed into place.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"FACE3DSR-CKPT"
VERSION = 1
_DTYPES = {"f4": np.dtype("<f4"), "i4": np.dtype("<i4")}


class CheckpointError(Exception):
    pass


class CorruptManifestError(CheckpointError):
    pass


class TruncatedBlobError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    """``stored`` or ``expected`` is None when the tensor is absent on that side."""

    def __init__(self, name: str, stored, expected):
        have = "no such tensor" if stored is None else f"shape {tuple(stored)}"
        want = "no such tensor" if expected is None else f"shape {tuple(expected)}"
        super().__init__(f"tensor {name!r}: checkpoint has {have}, model expects {want}")
        self.name = name
        self.stored = stored
        self.expected = expected


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def subset(self, prefix: str) -> dict[str, np.ndarray]:
        return {k[len(prefix):]: v for k, v in self.tensors.items() if k.startswith(prefix)}

    def load_into(self, module, prefix: str) -> None:
        """Copy ``prefix``-named tensors into a module.

        The checkpoint's ``prefix`` namespace must match the module's parameter
        set exactly, names and shapes, and is checked in full before any copy.
        """
        params = module.named_parameters()
        stored = self.subset(prefix)
        for name, p in params.items():
            if name not in stored:
                raise ShapeMismatchError(prefix + name, None, p.shape)
            if stored[name].shape != p.shape:
                raise ShapeMismatchError(prefix + name, stored[name].shape, p.shape)
        for name in sorted(stored.keys() - params.keys()):
            raise ShapeMismatchError(prefix + name, stored[name].shape, None)
        for name, p in params.items():
            p.data = np.array(self.tensors[prefix + name], dtype=np.float32)


def _encode(arr: np.ndarray) -> tuple[str, bytes]:
    if arr.dtype.kind == "f":
        return "f4", np.ascontiguousarray(arr, dtype="<f4").tobytes()
    if arr.dtype.kind in "iu":
        return "i4", np.ascontiguousarray(arr, dtype="<i4").tobytes()
    raise CheckpointError(f"unsupported dtype {arr.dtype}")


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    entries = []
    chunks = []
    offset = 0
    for name in sorted(ckpt.tensors):
        arr = np.asarray(ckpt.tensors[name])
        tag, raw = _encode(arr)
        entries.append({"name": name, "dtype": tag, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = json.dumps({"metadata": ckpt.metadata, "blob_bytes": offset, "tensors": entries},
                          sort_keys=True).encode()
    header = MAGIC + b"\n" + f"version {VERSION}\nmanifest {len(manifest)}\n".encode()
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(manifest)
            for raw in chunks:
                fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _validate(manifest: dict) -> None:
    if not isinstance(manifest, dict) or not isinstance(manifest.get("tensors"), list):
        raise CorruptManifestError("manifest lacks a tensor list")
    total = manifest.get("blob_bytes")
    if not isinstance(total, int) or total < 0:
        raise CorruptManifestError("manifest lacks a valid blob_bytes")
    spans = []
    seen = set()
    for e in manifest["tensors"]:
        try:
            name, tag, shape, off, nb = e["name"], e["dtype"], e["shape"], e["offset"], e["nbytes"]
        except (KeyError, TypeError) as exc:
            raise CorruptManifestError(f"malformed tensor entry {e!r}") from exc
        if name in seen:
            raise CorruptManifestError(f"duplicate tensor {name!r}")
        seen.add(name)
        if tag not in _DTYPES:
            raise CorruptManifestError(f"tensor {name!r}: unknown dtype {tag!r}")
        if not all(isinstance(s, int) and s >= 0 for s in shape):
            raise CorruptManifestError(f"tensor {name!r}: bad shape {shape!r}")
        if nb != int(np.prod(shape, dtype=np.int64)) * 4:
            raise CorruptManifestError(f"tensor {name!r}: byte length {nb} does not match shape {shape}")
        if not isinstance(off, int) or off < 0 or off + nb > total:
            raise CorruptManifestError(f"tensor {name!r}: span [{off}, {off + nb}) outside blob of {total} bytes")
        spans.append((off, off + nb, name))
    spans.sort()
    for (a0, a1, an), (b0, b1, bn) in zip(spans, spans[1:]):
        if b0 < a1:
            raise CorruptManifestError(f"tensors {an!r} and {bn!r} overlap")


def load_checkpoint(path) -> Checkpoint:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc}") from exc
    with fh:
        if fh.readline().rstrip(b"\n") != MAGIC:
            raise CorruptManifestError(f"{path}: not a face3dsr checkpoint (bad magic)")
        try:
            version = fh.readline().decode().split()
            size = fh.readline().decode().split()
            if version[0] != "version" or size[0] != "manifest":
                raise ValueError
            ver, n = int(version[1]), int(size[1])
        except (ValueError, IndexError, UnicodeDecodeError) as exc:
            raise CorruptManifestError(f"{path}: malformed header") from exc
        if ver != VERSION:
            raise CorruptManifestError(f"{path}: unsupported format version {ver}")
        raw = fh.read(n)
        if len(raw) != n:
            raise CorruptManifestError(f"{path}: manifest truncated")
        try:
            manifest = json.loads(raw)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise CorruptManifestError(f"{path}: manifest is not valid JSON") from exc
        _validate(manifest)
        blob = fh.read()
    total = manifest["blob_bytes"]
    if len(blob) < total:
        raise TruncatedBlobError(f"{path}: blob has {len(blob)} bytes, manifest declares {total}")
    if len(blob) > total:
        raise CheckpointError(f"{path}: {len(blob) - total} trailing bytes after blob")
    tensors = {}
    for e in manifest["tensors"]:
        dt = _DTYPES[e["dtype"]]
        arr = np.frombuffer(blob, dtype=dt, count=e["nbytes"] // 4, offset=e["offset"])
        tensors[e["name"]] = arr.reshape(e["shape"]).astype(dt.newbyteorder("="), copy=True)
    return Checkpoint(tensors, manifest.get("metadata", {}))
