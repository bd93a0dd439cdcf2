"""Federated learning simulator with cloud-side fuzzy synthesis of mimic IID data."""

from .client import ClientShard, ClientStats, LocalTrainConfig, local_stats, local_update, \
    local_update_rectified
from .data import Dataset, PartitionPlan, load_idx, make_synthetic, partition_iid, partition_noniid
from .fsnet import FsnetConfig, build_mixture, make_probe_matrix, sample_mixture, synthesize, \
    train_hidden
from .metrics import RoundMetrics, acc_local, evaluate, read_metrics_csv, write_metrics_csv
from .nn import ModelParams, ModelSpec, forward, init_params, softmax
from .server import ServerConfig, aggregate, beta_at, privacy_rank_check, run_training, \
    select_clients

__version__ = "0.1.0"
