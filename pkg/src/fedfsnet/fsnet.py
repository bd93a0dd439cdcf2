"""Cloud-side fuzzy synthesis of mimic IID data.

The server only sees the aggregated global model and each client's two
scalar statistics.  It fits a decoder that inverts the global model on
samples from a Gaussian mixture built from those statistics, then decodes
class-dominant probability vectors into a small mimic dataset.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .client import ClientStats
from .errors import ConfigError, DegeneracyError, NumericError


@dataclass
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    dim: int

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        if self.weights.ndim != 1 or self.weights.size == 0:
            raise ConfigError("mixture needs at least one component")
        if (self.weights < 0).any() or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ConfigError("mixture weights must be non-negative and sum to 1")
        if (self.variances < 0).any():
            raise ConfigError("variances must be non-negative")

    @property
    def num_components(self) -> int:
        return self.weights.size


@dataclass
class ProbeMatrix:
    """Columns are class-dominant probability vectors: ``c_diag`` on the diagonal."""

    matrix: np.ndarray
    c_diag: float
    eps: float

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def column(self, i: int) -> np.ndarray:
        return self.matrix[:, i]


@dataclass
class MimicDataset:
    features: np.ndarray
    intended_class: np.ndarray

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass
class FsnetConfig:
    hidden_layer_sizes: tuple[int, ...] | None = None
    train_steps: int = 2000
    sample_batch: int = 64
    lr: float = 0.05
    synth_count: int = 60
    c_diag: float = 0.91
    eps: float | None = None
    mixture_weighting: str = "samples"
    eval_batch: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("fsnet lr must be positive")
        if self.train_steps < 0 or self.sample_batch < 1 or self.synth_count < 1:
            raise ConfigError("fsnet counts out of range")
        if self.mixture_weighting not in ("samples", "uniform"):
            raise ConfigError(f"unknown mixture weighting {self.mixture_weighting!r}")


@dataclass
class HiddenTrainResult:
    params: nn.ModelParams
    initial_loss: float
    final_loss: float


def build_mixture(stats: Sequence[tuple[ClientStats, int]], dim: int,
                  weighting: str = "samples") -> GaussianMixture:
    """One component per client, weighted by sample count (or uniformly)."""
    if not stats:
        raise ConfigError("no client statistics to build a mixture from")
    counts = np.array([n for _, n in stats], dtype=np.float64)
    if (counts < 1).any():
        raise ConfigError("every client must report N_k >= 1")
    if weighting == "uniform":
        weights = np.full(counts.size, 1.0 / counts.size)
    else:
        weights = counts / counts.sum()
    return GaussianMixture(
        weights,
        [s.mu for s, _ in stats],
        [s.sigma for s, _ in stats],
        dim,
    )


def draw_mixture(gm: GaussianMixture, count: int, rng: np.random.Generator
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Unclipped samples and the component each row came from."""
    comp = rng.choice(gm.num_components, size=count, p=gm.weights)
    noise = rng.standard_normal((count, gm.dim))
    z = gm.means[comp][:, None] + np.sqrt(gm.variances[comp])[:, None] * noise
    return z, comp


def sample_mixture(gm: GaussianMixture, count: int, seed) -> np.ndarray:
    if count < 1:
        raise ConfigError("count must be >= 1")
    z, _ = draw_mixture(gm, count, np.random.default_rng(seed))
    return np.clip(z, 0.0, 1.0)


def hidden_spec(global_spec: nn.ModelSpec, hidden_layer_sizes=None) -> nn.ModelSpec:
    if hidden_layer_sizes is None:
        return nn.mirrored_decoder_spec(global_spec)
    sizes = (global_spec.output_dim, *hidden_layer_sizes, global_spec.input_dim)
    return nn.ModelSpec(sizes, output="sigmoid")


def train_hidden(global_params: nn.ModelParams, config: FsnetConfig, gm: GaussianMixture,
                 init: nn.ModelParams | None = None, seed=None) -> HiddenTrainResult:
    """SGD on the reconstruction loss with the global model frozen.

    ``init`` warm-starts the decoder; otherwise it is freshly initialized
    from the seed.  Initial and final losses are measured on one fixed
    evaluation batch so they are comparable.
    """
    seed = config.seed if seed is None else seed
    ss = np.random.SeedSequence(seed)
    init_ss, eval_ss, train_ss = ss.spawn(3)
    if init is None:
        hidden = nn.init_params(hidden_spec(global_params.spec, config.hidden_layer_sizes), init_ss)
    else:
        hidden = init.copy()
    eval_z = sample_mixture(gm, config.eval_batch, eval_ss)
    initial = nn.l2_recon_loss_grad(hidden, global_params, eval_z).loss
    rng = np.random.default_rng(train_ss)
    for _ in range(config.train_steps):
        z, _ = draw_mixture(gm, config.sample_batch, rng)
        step = nn.l2_recon_loss_grad(hidden, global_params, np.clip(z, 0.0, 1.0))
        if not np.isfinite(step.loss):
            raise NumericError("hidden model reconstruction loss diverged")
        hidden = nn.sgd_step(hidden, step.grads, config.lr)
    final = nn.l2_recon_loss_grad(hidden, global_params, eval_z).loss
    return HiddenTrainResult(hidden, initial, final)


def make_probe_matrix(n: int, c_diag: float, eps: float | None = None) -> ProbeMatrix:
    if n < 1:
        raise ConfigError("need at least one class")
    if c_diag <= 1.0 / n:
        raise DegeneracyError(f"c_diag={c_diag} does not dominate 1/n={1.0 / n}")
    if c_diag < 0.9 or c_diag > 1.0:
        raise DegeneracyError(f"c_diag={c_diag} outside [0.9, 1]")
    if eps is None:
        eps = (1.0 - c_diag) / (n - 1)
    elif abs(c_diag + (n - 1) * eps - 1.0) > 1e-9:
        raise ConfigError(f"c_diag + (n-1)*eps = {c_diag + (n - 1) * eps}, not 1")
    matrix = np.full((n, n), float(eps))
    np.fill_diagonal(matrix, c_diag)
    return ProbeMatrix(matrix, float(c_diag), float(eps))


def jittered_probes(probe: ProbeMatrix, synth_count: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Rows cycle through the probe columns; each gets uniform noise of size 0.1*eps.

    Returns ``(probes, intended_class)`` with probes renormalized to sum 1.
    """
    if synth_count < probe.n:
        raise ConfigError(f"synth_count={synth_count} cannot cover {probe.n} classes")
    cls = np.arange(synth_count) % probe.n
    rng = np.random.default_rng(seed)
    amp = 0.1 * probe.eps
    rows = probe.matrix.T[cls] + rng.uniform(-amp, amp, size=(synth_count, probe.n))
    rows = np.clip(rows, 0.0, None)
    rows /= rows.sum(axis=1, keepdims=True)
    return rows, cls


def synthesize(hidden: nn.ModelParams, probe: ProbeMatrix, synth_count: int, seed) -> MimicDataset:
    rows, cls = jittered_probes(probe, synth_count, seed)
    features = np.clip(nn.forward(hidden, rows), 0.0, 1.0)
    return MimicDataset(features, cls)


def fuzzy_agreement(global_params: nn.ModelParams, mimic: MimicDataset) -> float:
    """Fraction of mimic rows the global model assigns to their intended class."""
    return float(np.mean(nn.predict(global_params, mimic.features) == mimic.intended_class))


def dump_mimic(mimic: MimicDataset, path) -> None:
    """Row and column counts as little-endian uint64, then row-major float64."""
    feats = np.ascontiguousarray(mimic.features, dtype="<f8")
    with open(Path(path), "wb") as f:
        f.write(struct.pack("<QQ", *feats.shape))
        f.write(feats.tobytes())


def load_mimic_features(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    rows, cols = struct.unpack("<QQ", raw[:16])
    return np.frombuffer(raw[16:], dtype="<f8").reshape(rows, cols).astype(np.float64)
