"""Accuracy metrics and the per-round CSV log."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .data import Dataset
from .errors import EmptyInputError, FormatError

CSV_COLUMNS = (
    "round", "acc_global", "acc_local", "mean_train_loss", "beta",
    "recon_initial", "recon_final", "selected",
)


@dataclass
class RoundMetrics:
    round: int
    acc_global: float
    acc_local: float
    mean_train_loss: float
    beta: float
    recon_initial: float | None = None
    recon_final: float | None = None
    selected_ids: list[int] = field(default_factory=list)


def evaluate(params: nn.ModelParams, testset: Dataset) -> float:
    """Top-1 accuracy; ties go to the lowest class index."""
    if len(testset) == 0:
        raise EmptyInputError("empty test set")
    return float(np.mean(nn.predict(params, testset.features) == testset.labels))


def acc_local(client_params: Sequence[nn.ModelParams], testset: Dataset) -> float:
    if not client_params:
        raise EmptyInputError("no client models to evaluate")
    return float(np.mean([evaluate(p, testset) for p in client_params]))


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.6f}"


def _row(m: RoundMetrics) -> list[str]:
    return [
        str(m.round), _fmt(m.acc_global), _fmt(m.acc_local), _fmt(m.mean_train_loss),
        _fmt(m.beta), _fmt(m.recon_initial), _fmt(m.recon_final),
        ";".join(str(i) for i in m.selected_ids),
    ]


def write_metrics_csv(metrics: Sequence[RoundMetrics], path) -> None:
    with open(Path(path), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for m in metrics:
            w.writerow(_row(m))


def read_metrics_csv(path) -> list[RoundMetrics]:
    with open(Path(path), newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_COLUMNS:
            raise FormatError(f"{path}: unexpected header {header}")
        out = []
        for row in reader:
            if len(row) != len(CSV_COLUMNS):
                raise FormatError(f"{path}: row has {len(row)} fields")
            opt = [float(v) if v else None for v in row[5:7]]
            out.append(RoundMetrics(
                int(row[0]), float(row[1]), float(row[2]), float(row[3]), float(row[4]),
                opt[0], opt[1], [int(i) for i in row[7].split(";") if i],
            ))
    return out
