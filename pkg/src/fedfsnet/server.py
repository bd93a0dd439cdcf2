"""Round orchestration: sampling, FedAvg aggregation, FSNet scheduling."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from . import fsnet, nn
from .checkpoint import write_checkpoint
from .client import ClientShard, ClientStats, LocalTrainConfig, local_stats, local_update, \
    local_update_rectified
from .data import Dataset, PartitionPlan
from .errors import ConfigError, DegeneracyError, DimensionError, EmptyInputError, NumericError
from .metrics import RoundMetrics, acc_local, evaluate

log = logging.getLogger(__name__)

MODES = ("fedavg", "fed_fsnet")
RANK_TOL = 1e-10

# stream tags mixed into every derived seed
_INIT, _SELECT, _CLIENT, _HIDDEN, _SYNTH = range(5)


@dataclass
class ServerConfig:
    num_clients: int = 100
    fraction: float = 1.0
    rounds: int = 50
    beta0: float = 1.0
    beta_decay: float = 0.1
    beta_period: int = 10
    mode: str = "fedavg"
    seed: int = 0

    def __post_init__(self):
        if self.num_clients < 1 or self.rounds < 1 or self.beta_period < 1:
            raise ConfigError("num_clients, rounds and beta_period must be >= 1")
        if not 0 < self.fraction <= 1:
            raise ConfigError(f"fraction must lie in (0, 1], got {self.fraction}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.beta0 < 0 or self.beta_decay < 0:
            raise ConfigError("beta0 and beta_decay must be non-negative")


@dataclass
class RoundState:
    round: int
    global_params: nn.ModelParams
    hidden_params: nn.ModelParams | None = None
    stats: dict[int, tuple[ClientStats, int]] = field(default_factory=dict)
    mimic: fsnet.MimicDataset | None = None


@dataclass
class TrainingResult:
    metrics: list[RoundMetrics]
    state: RoundState


def num_selected(num_clients: int, fraction: float) -> int:
    return max(1, int(np.floor(fraction * num_clients + 0.5)))


def select_clients(num_clients: int, fraction: float, seed: int, round_idx: int) -> list[int]:
    """Uniform draw without replacement, returned sorted."""
    if not 0 < fraction <= 1:
        raise ConfigError(f"fraction must lie in (0, 1], got {fraction}")
    m = num_selected(num_clients, fraction)
    perm = np.random.default_rng([seed, _SELECT, round_idx]).permutation(num_clients)
    return sorted(int(i) for i in perm[:m])


def client_seed(seed: int, round_idx: int, client_id: int) -> list[int]:
    return [seed, _CLIENT, round_idx, client_id]


def aggregate(updates: Sequence[tuple[nn.ModelParams, int]]) -> nn.ModelParams:
    """Sample-weighted mean of client models, summed in the given order.

    Callers pass updates sorted by client id so the float reduction is fixed.
    """
    if not updates:
        raise EmptyInputError("nothing to aggregate")
    spec = updates[0][0].spec
    if any(p.spec != spec for p, _ in updates):
        raise DimensionError("client models have different specs")
    total = float(sum(n for _, n in updates))
    first, n0 = updates[0]
    w0 = n0 / total
    weights = [w0 * a for a in first.weights]
    biases = [w0 * b for b in first.biases]
    for params, n in updates[1:]:
        w = n / total
        for acc, a in zip(weights, params.weights):
            acc += w * a
        for acc, b in zip(biases, params.biases):
            acc += w * b
    return nn.ModelParams(spec, weights, biases)


def beta_at(t: int, config: ServerConfig | None = None) -> float:
    """``beta0 * decay ** floor((t-1) / period)``, correctly rounded from the decimal inputs."""
    if t < 1:
        raise ConfigError("rounds are numbered from 1")
    cfg = config or ServerConfig()
    k = (t - 1) // cfg.beta_period
    exact = Fraction(repr(float(cfg.beta0))) * Fraction(repr(float(cfg.beta_decay))) ** k
    return float(exact)


def row_reduce_rank(matrix: np.ndarray, tol: float = RANK_TOL) -> int:
    """Rank by Gaussian elimination with partial pivoting."""
    a = np.array(matrix, dtype=np.float64)
    rows, cols = a.shape
    rank = 0
    for c in range(cols):
        if rank == rows:
            break
        pivot = rank + int(np.argmax(np.abs(a[rank:, c])))
        if abs(a[pivot, c]) <= tol:
            continue
        a[[rank, pivot]] = a[[pivot, rank]]
        a[rank + 1:] -= np.outer(a[rank + 1:, c] / a[rank, c], a[rank])
        rank += 1
    return rank


def aggregation_matrix(alphas: Sequence[float], d: int) -> np.ndarray:
    """The d x (n*d) block row ``[a_1 I | a_2 I | ... | a_n I]``."""
    return np.hstack([a * np.eye(d) for a in alphas])


def privacy_rank_check(alphas: Sequence[float], d: int) -> tuple[int, int, bool]:
    """Rank and kernel dimension of the aggregation map from stacked client models.

    A nonzero kernel means individual models cannot be recovered from their
    weighted sum.  Returns ``(rank, kernel_dim, unique)``.
    """
    alphas = [float(a) for a in alphas]
    if not alphas or d < 1:
        raise ConfigError("need at least one weight and d >= 1")
    if all(a == 0 for a in alphas):
        raise DegeneracyError("all aggregation weights are zero")
    m = aggregation_matrix(alphas, d)
    rank = row_reduce_rank(m)
    kernel = m.shape[1] - rank
    return rank, kernel, kernel == 0


def _threads() -> int:
    try:
        return max(0, int(os.environ.get("FEDFS_THREADS", "0")))
    except ValueError:
        raise ConfigError("FEDFS_THREADS must be an integer")


def run_training(config: ServerConfig, train: Dataset, test: Dataset, plan: PartitionPlan,
                 model_spec: nn.ModelSpec, local_config: LocalTrainConfig,
                 fsnet_config: fsnet.FsnetConfig | None = None, *,
                 checkpoint_dir=None, mimic_dir=None,
                 threads: int | None = None) -> TrainingResult:
    """Simulate ``config.rounds`` communication rounds.

    Round 1 is plain local training from the initial model (no mimic data
    exists yet).  From round 2 on, fed_fsnet mode first fits the decoder to
    the current global model, synthesizes the mimic set and ships it with the
    model.  Every round ends with aggregation of the selected clients.
    """
    if plan.num_clients != config.num_clients:
        raise ConfigError(f"plan has {plan.num_clients} clients, config {config.num_clients}")
    if model_spec.input_dim != train.dim or model_spec.output_dim != train.num_classes:
        raise DimensionError("model spec does not match dataset dims/classes")
    fsnet_config = fsnet_config or fsnet.FsnetConfig()
    threads = _threads() if threads is None else threads
    shards = [ClientShard(i, idx, train) for i, idx in enumerate(plan.assignments)]
    probe = None
    if config.mode == "fed_fsnet":
        probe = fsnet.make_probe_matrix(model_spec.output_dim, fsnet_config.c_diag, fsnet_config.eps)
    for d in (checkpoint_dir, mimic_dir):
        if d is not None:
            Path(d).mkdir(parents=True, exist_ok=True)

    state = RoundState(0, nn.init_params(model_spec, [config.seed, _INIT]))
    metrics: list[RoundMetrics] = []
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 0 else None
    try:
        for t in range(1, config.rounds + 1):
            beta = beta_at(t, config)
            recon = (None, None)
            state.mimic = None
            if config.mode == "fed_fsnet" and t > 1 and beta > 0:
                gm = fsnet.build_mixture([state.stats[c] for c in sorted(state.stats)],
                                         train.dim, fsnet_config.mixture_weighting)
                fit = fsnet.train_hidden(state.global_params, fsnet_config, gm,
                                         init=state.hidden_params,
                                         seed=[config.seed, _HIDDEN, t])
                state.hidden_params = fit.params
                recon = (fit.initial_loss, fit.final_loss)
                state.mimic = fsnet.synthesize(fit.params, probe, fsnet_config.synth_count,
                                               [config.seed, _SYNTH, t])
                if mimic_dir is not None:
                    fsnet.dump_mimic(state.mimic, Path(mimic_dir) / f"mimic_{t:03d}.bin")
                log.info("round %d: recon %.4f -> %.4f, mimic agreement %.2f", t,
                         fit.initial_loss, fit.final_loss,
                         fsnet.fuzzy_agreement(state.global_params, state.mimic))

            selected = select_clients(config.num_clients, config.fraction, config.seed, t)
            glob, mimic = state.global_params, state.mimic

            def work(cid: int):
                cfg = replace(local_config, beta=beta, seed=client_seed(config.seed, t, cid))
                if mimic is None:
                    return local_update(glob, shards[cid], cfg)
                return local_update_rectified(glob, shards[cid], mimic.features, cfg)

            try:
                results = list(pool.map(work, selected)) if pool else [work(c) for c in selected]
            except NumericError as exc:
                raise NumericError(f"round {t}: {exc}") from exc

            for cid in selected:
                state.stats[cid] = (local_stats(shards[cid]), shards[cid].size)
            state.global_params = aggregate(
                [(p, shards[cid].size) for cid, (p, _) in zip(selected, results)]
            )
            if not state.global_params.all_finite():
                raise NumericError(f"round {t}: aggregated model is not finite")
            state.round = t
            m = RoundMetrics(
                round=t,
                acc_global=evaluate(state.global_params, test),
                acc_local=acc_local([p for p, _ in results], test),
                mean_train_loss=float(np.mean([loss for _, loss in results])),
                beta=beta,
                recon_initial=recon[0],
                recon_final=recon[1],
                selected_ids=selected,
            )
            metrics.append(m)
            log.info("round %d: acc_global=%.4f acc_local=%.4f loss=%.4f", t,
                     m.acc_global, m.acc_local, m.mean_train_loss)
            if checkpoint_dir is not None:
                write_checkpoint(Path(checkpoint_dir) / f"round_{t:03d}.ckpt",
                                 state.global_params, state.hidden_params)
    finally:
        if pool is not None:
            pool.shutdown()
    return TrainingResult(metrics, state)
