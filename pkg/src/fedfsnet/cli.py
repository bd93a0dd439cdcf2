"""Command-line entry point.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import gradcheck, server
from .config import load_config
from .errors import ConfigError, ConsistencyError, FedFSError, FormatError, TruncatedFileError
from .metrics import read_metrics_csv, write_metrics_csv

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("fedfsnet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = cfg.resolve(args.output or cfg.output_dir)
    train, test = cfg.load_datasets()
    plan = cfg.partition(train)
    spec = cfg.model_spec(train.dim, train.num_classes)
    result = server.run_training(
        cfg.server, train, test, plan, spec, cfg.local, cfg.fsnet,
        checkpoint_dir=out / "checkpoints",
        mimic_dir=out / "mimic" if cfg.dump_mimic else None,
    )
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "metrics.csv"
    write_metrics_csv(result.metrics, csv_path)
    last = result.metrics[-1]
    print(f"wrote {csv_path} ({len(result.metrics)} rounds); "
          f"final acc_global={last.acc_global:.4f} acc_local={last.acc_local:.4f}")
    return EXIT_OK


def cmd_partition_report(args) -> int:
    cfg = load_config(args.config)
    train, _ = cfg.load_datasets()
    plan = cfg.partition(train)
    plan.validate()
    classes = train.num_classes
    print("client  size  " + " ".join(f"{c:>5d}" for c in range(classes)) + "  distinct")
    for cid, idx in enumerate(plan.assignments):
        hist = np.bincount(train.labels[idx], minlength=classes)
        print(f"{cid:>6d} {idx.size:>5d}  " + " ".join(f"{h:>5d}" for h in hist)
              + f"  {int((hist > 0).sum()):>8d}")
    return EXIT_OK


def cmd_privacy_check(args) -> int:
    if args.clients < 1 or args.dim < 1:
        raise ConfigError("--clients and --dim must be >= 1")
    alphas = args.alphas or [1.0 / args.clients] * args.clients
    if len(alphas) != args.clients:
        raise ConfigError(f"got {len(alphas)} alphas for {args.clients} clients")
    rank, kernel, unique = server.privacy_rank_check(alphas, args.dim)
    print(f"rank={rank} kernel={kernel} unique={str(unique).lower()}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    ok = True
    for r in gradcheck.run_suite(args.seed, args.nets, args.coords):
        passed = r.max_rel_error < args.tol
        ok &= passed
        print(f"{r.loss_name:<18} nets={r.nets} coords={r.coords_checked} "
              f"max_rel_error={r.max_rel_error:.3e} {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_compare(args) -> int:
    a, b = read_metrics_csv(args.first), read_metrics_csv(args.second)
    if not a or not b:
        raise FormatError("both metrics files need at least one round")
    fa, fb = a[-1], b[-1]
    print(f"rounds: {fa.round} vs {fb.round}")
    for name in ("acc_global", "acc_local", "mean_train_loss"):
        va, vb = getattr(fa, name), getattr(fb, name)
        print(f"{name}: {va:.6f} -> {vb:.6f} delta={vb - va!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fedfsnet", description="Federated learning simulator with FSNet synthesis")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-round progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="override output directory")
    r.set_defaults(func=cmd_run)

    pr = sub.add_parser("partition-report", help="per-client label histograms")
    pr.add_argument("config")
    pr.set_defaults(func=cmd_partition_report)

    pc = sub.add_parser("privacy-check", help="rank/kernel of the aggregation map")
    pc.add_argument("--clients", type=int, required=True)
    pc.add_argument("--dim", type=int, required=True)
    pc.add_argument("--alphas", type=float, nargs="+")
    pc.set_defaults(func=cmd_privacy_check)

    g = sub.add_parser("gradcheck", help="finite-difference check of every loss")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--nets", type=int, default=20)
    g.add_argument("--coords", type=int, default=100)
    g.add_argument("--tol", type=float, default=1e-4)
    g.set_defaults(func=cmd_gradcheck)

    c = sub.add_parser("compare", help="final-round deltas between two metrics CSVs")
    c.add_argument("first")
    c.add_argument("second")
    c.set_defaults(func=cmd_compare)
    return p


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FormatError, ConsistencyError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FedFSError, TruncatedFileError, OSError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run_cli())
