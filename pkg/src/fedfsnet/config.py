"""Experiment configuration files.

One ``section.key = value`` assignment per line, ``#`` starts a comment.
Values are Python literals where they parse as such (``200, 200`` is a
tuple, ``0.01`` a float); anything else is kept as a bare string.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import nn
from .client import LocalTrainConfig
from .data import Dataset, load_idx, make_synthetic, partition_iid, partition_noniid
from .errors import ConfigError
from .fsnet import FsnetConfig
from .server import ServerConfig


def parse_config_text(text: str) -> dict[str, object]:
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        try:
            values[key] = ast.literal_eval(raw)
        except (ValueError, SyntaxError):
            values[key] = raw
    return values


@dataclass
class DataConfig:
    source: str = "synthetic"
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    train_limit: int | None = None
    num_classes: int = 10
    samples_per_class: int = 100
    test_per_class: int = 50
    dim: int = 16
    spread: float = 0.1
    partition: str = "noniid"
    num_shards: int | None = None
    seed: int = 0


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    hidden_sizes: tuple[int, ...] = (200,)
    server: ServerConfig = field(default_factory=ServerConfig)
    local: LocalTrainConfig = field(default_factory=LocalTrainConfig)
    fsnet: FsnetConfig = field(default_factory=FsnetConfig)
    output_dir: str = "runs/default"
    dump_mimic: bool = False
    base_dir: Path = field(default=Path("."), repr=False)

    def model_spec(self, dim: int, num_classes: int) -> nn.ModelSpec:
        return nn.ModelSpec((dim, *self.hidden_sizes, num_classes))

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def load_datasets(self) -> tuple[Dataset, Dataset]:
        d = self.data
        if d.source == "synthetic":
            # one draw, so train and test share class centers
            full = make_synthetic(d.num_classes, d.samples_per_class + d.test_per_class,
                                  d.dim, d.spread, d.seed)
            per = d.samples_per_class + d.test_per_class
            is_train = np.arange(len(full)) % per < d.samples_per_class
            return full.subset(is_train.nonzero()[0]), full.subset((~is_train).nonzero()[0])
        if d.source == "idx":
            paths = [d.train_images, d.train_labels, d.test_images, d.test_labels]
            if any(p is None for p in paths):
                raise ConfigError("idx source needs train/test image and label paths")
            resolved = [self.resolve(p) for p in paths]
            for p in resolved:
                if not p.exists():
                    raise ConfigError(f"data file not found: {p}")
            train = load_idx(resolved[0], resolved[1], d.num_classes)
            test = load_idx(resolved[2], resolved[3], d.num_classes)
            if d.train_limit is not None:
                train = train.subset(range(min(d.train_limit, len(train))))
            return train, test
        raise ConfigError(f"unknown data source {d.source!r}")

    def partition(self, train: Dataset):
        k = self.server.num_clients
        if self.data.partition == "iid":
            return partition_iid(train, k, self.data.seed)
        if self.data.partition == "noniid":
            return partition_noniid(train, k, self.data.num_shards or 2 * k, self.data.seed)
        raise ConfigError(f"unknown partition {self.data.partition!r}")


_SECTIONS = {
    "data": DataConfig,
    "server": ServerConfig,
    "local": LocalTrainConfig,
    "fsnet": FsnetConfig,
}


def _as_tuple(v) -> tuple[int, ...]:
    if isinstance(v, (int, float)):
        return (int(v),)
    if isinstance(v, (tuple, list)):
        return tuple(int(x) for x in v)
    if v in ("", "none", "None", None):
        return ()
    raise ConfigError(f"expected a list of sizes, got {v!r}")


def config_from_dict(values: dict[str, object], base_dir=".") -> ExperimentConfig:
    grouped: dict[str, dict[str, object]] = {name: {} for name in _SECTIONS}
    top: dict[str, object] = {}
    for key, value in values.items():
        section, _, name = key.partition(".")
        if section in grouped and name:
            allowed = {f.name for f in fields(_SECTIONS[section])}
            if name not in allowed:
                raise ConfigError(f"unknown key {key!r}")
            grouped[section][name] = value
        elif key in ("model.hidden", "output.dir", "output.dump_mimic", "seed"):
            top[key] = value
        else:
            raise ConfigError(f"unknown key {key!r}")
    if "fsnet" in grouped and "hidden_layer_sizes" in grouped["fsnet"]:
        grouped["fsnet"]["hidden_layer_sizes"] = _as_tuple(grouped["fsnet"]["hidden_layer_sizes"])
    if "seed" in top:
        # a global seed fills in every section seed not set explicitly
        for section in ("data", "server", "local", "fsnet"):
            grouped[section].setdefault("seed", int(top["seed"]))
    try:
        cfg = ExperimentConfig(
            data=DataConfig(**grouped["data"]),
            server=ServerConfig(**grouped["server"]),
            local=LocalTrainConfig(**grouped["local"]),
            fsnet=FsnetConfig(**grouped["fsnet"]),
            base_dir=Path(base_dir),
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if "model.hidden" in top:
        cfg.hidden_sizes = _as_tuple(top["model.hidden"])
    if "output.dir" in top:
        cfg.output_dir = str(top["output.dir"])
    if "output.dump_mimic" in top:
        cfg.dump_mimic = bool(top["output.dump_mimic"])
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return config_from_dict(parse_config_text(path.read_text()), base_dir=path.parent)
