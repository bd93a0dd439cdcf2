"""A simulated edge device."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import Dataset
from .errors import ConfigError, DimensionError, EmptyInputError, NumericError


@dataclass
class ClientShard:
    id: int
    indices: np.ndarray
    dataset: Dataset
    _features: np.ndarray | None = field(default=None, repr=False)
    _labels: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.size == 0:
            raise EmptyInputError(f"client {self.id} holds no samples")

    @property
    def size(self) -> int:
        return self.indices.size

    @property
    def features(self) -> np.ndarray:
        if self._features is None:
            self._features = self.dataset.features[self.indices]
        return self._features

    @property
    def labels(self) -> np.ndarray:
        if self._labels is None:
            self._labels = self.dataset.labels[self.indices]
        return self._labels


@dataclass(frozen=True)
class ClientStats:
    mu: float
    sigma: float


@dataclass
class LocalTrainConfig:
    local_epochs: int = 10
    batch_size: int = 60
    lr: float = 0.01
    beta: float = 0.0
    seed: int | tuple = 0

    def __post_init__(self):
        if self.local_epochs < 1 or self.batch_size < 1:
            raise ConfigError("local_epochs and batch_size must be >= 1")
        if self.lr < 0 or self.beta < 0:
            raise ConfigError("lr and beta must be non-negative")


def local_stats(shard: ClientShard) -> ClientStats:
    x = shard.features
    return ClientStats(float(x.mean()), float(x.var()))


def local_update(global_params: nn.ModelParams, shard: ClientShard,
                 config: LocalTrainConfig) -> tuple[nn.ModelParams, float]:
    """Mini-batch SGD on cross-entropy; ``config.beta`` is ignored."""
    params, losses = train_epochs(global_params, shard, config)
    return params, losses[-1]


def local_update_rectified(global_params: nn.ModelParams, shard: ClientShard,
                           mimic: Dataset | np.ndarray, config: LocalTrainConfig
                           ) -> tuple[nn.ModelParams, float]:
    """Cross-entropy on the shard plus ``beta`` times KL-to-uniform on the mimic set.

    Every local mini-batch is paired with the whole mimic set.
    """
    mimic_x = mimic.features if isinstance(mimic, Dataset) else np.asarray(mimic, dtype=np.float64)
    if mimic_x.ndim != 2 or mimic_x.shape[0] == 0:
        raise EmptyInputError("mimic set is empty")
    if mimic_x.shape[1] != shard.features.shape[1]:
        raise DimensionError("mimic features do not match shard feature dim")
    params, losses = train_epochs(global_params, shard, config, mimic_x)
    return params, losses[-1]


def train_epochs(global_params: nn.ModelParams, shard: ClientShard, config: LocalTrainConfig,
                 mimic_x: np.ndarray | None = None) -> tuple[nn.ModelParams, list[float]]:
    """Run local SGD and return the model plus the mean objective of every epoch."""
    beta = config.beta
    x, y = shard.features, shard.labels
    rng = np.random.default_rng(config.seed)
    params = global_params.copy()
    use_kl = mimic_x is not None and beta > 0
    history = []
    for _ in range(config.local_epochs):
        order = rng.permutation(shard.size)
        total = 0.0
        for start in range(0, shard.size, config.batch_size):
            idx = order[start:start + config.batch_size]
            step = nn.ce_loss_grad(params, x[idx], y[idx])
            loss, grads = step.loss, step.grads
            if use_kl:
                reg = nn.kl_uniform_loss_grad(params, mimic_x)
                loss += beta * reg.loss
                grads = nn.add_scaled(grads, reg.grads, beta)
            if not np.isfinite(loss):
                raise NumericError(f"client {shard.id}: loss diverged")
            params = nn.sgd_step(params, grads, config.lr)
            total += loss * idx.size
        history.append(total / shard.size)
    return params, history
