"""Flat ``key = value`` config files (``#`` comments) and the training config.

Recognised training keys::

    scale            4 or 8                         (default 8)
    channels         SR feature channels            (64)
    rcab_count       residual channel-attention blocks (8)
    reduction        channel-attention reduction    (16)
    lr               initial learning rate          (0.0002)
    lr_step          epochs between halvings        (50)
    batch            batch size                     (8)
    epochs           training epochs                (60)
    seed             RNG seed                       (0)
    data_dir         PNG directory; empty = synthetic faces
    skin_model_path  skin GMM config; empty = shipped model
    n_train, n_val   synthetic set sizes            (64, 16)
    regressor_widths comma list                     (16,32,64,128)
    no_prior, no_sam ablation switches              (false)
    joint            fine-tune the render branch during SR training (false)
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


def parse_kv(text: str) -> dict[str, str]:
    cp = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#",), inline_comment_prefixes=("#",),
                                   interpolation=None)
    cp.optionxform = str
    # flat format: indentation carries no meaning, so it must not read as a continuation line
    flat = "\n".join(line.strip() for line in text.splitlines())
    try:
        cp.read_string("[root]\n" + flat)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return dict(cp["root"])


def read_kv(path) -> dict[str, str]:
    try:
        return parse_kv(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


@dataclass
class TrainConfig:
    scale: int = 8
    channels: int = 64
    rcab_count: int = 8
    reduction: int = 16
    lr: float = 2e-4
    lr_step: int = 50
    batch: int = 8
    epochs: int = 60
    seed: int = 0
    data_dir: str = ""
    skin_model_path: str = ""
    n_train: int = 64
    n_val: int = 16
    regressor_widths: tuple[int, ...] = (16, 32, 64, 128)
    no_prior: bool = False
    no_sam: bool = False
    joint: bool = False
    hr_size: int = field(default=128, repr=False)

    def __post_init__(self):
        if self.scale not in (4, 8):
            raise ConfigError(f"scale must be 4 or 8, got {self.scale}")
        if self.channels < 1 or self.reduction < 1 or self.channels % self.reduction:
            raise ConfigError(f"reduction {self.reduction} must divide channels {self.channels}")
        if self.batch < 1 or self.epochs < 0 or self.rcab_count < 0:
            raise ConfigError("batch must be >= 1 and epochs/rcab_count >= 0")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")

    @property
    def lr_size(self) -> int:
        return self.hr_size // self.scale

    @classmethod
    def from_mapping(cls, kv: dict[str, str]) -> "TrainConfig":
        kwargs = {}
        fields = {f.name: f for f in dataclasses.fields(cls)}
        for key, raw in kv.items():
            if key not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            kind = fields[key].type
            try:
                if kind == "int":
                    kwargs[key] = int(raw)
                elif kind == "float":
                    kwargs[key] = float(raw)
                elif kind == "bool":
                    kwargs[key] = _bool(raw)
                elif key == "regressor_widths":
                    kwargs[key] = tuple(int(p) for p in raw.replace(",", " ").split())
                else:
                    kwargs[key] = raw.strip()
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_mapping(read_kv(path))

    def to_mapping(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_mapping(), sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)
