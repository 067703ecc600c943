"""Command line interface for the batch experiment pipeline.

Exit codes: 0 ok, 2 validation error, 3 numerical error, 4 io/format error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import data as data_mod
from . import harness, kernels, offline
from .errors import FormatError, NumericalError, ValidationError


def _cmd_offline(args):
    config = harness.load_config(args.config)
    estimate = harness.run_offline_phase(config, out_path=args.out)
    target = args.out or config.paths.subspace
    print(f"subspace estimate: d_k={estimate.d_k}, delta_off={estimate.delta_off:.6g}"
          f"{' (vacuous)' if estimate.vacuous else ''}")
    if target:
        print(f"wrote {target}")
    return 0


def _cmd_online(args):
    config = harness.load_config(args.config)
    estimate = offline.load_estimate(args.subspace)
    out_dir = args.out_dir or config.paths.out_dir
    logs = []
    env = harness.build_environment(config)
    for i in range(config.trials):
        logs.append(harness.run_online_trial(config, estimate, i, policy=args.policy, env=env))
    finals = np.array([log.cum_regret[-1] if log.t else 0.0 for log in logs])
    se = finals.std(ddof=1) / np.sqrt(len(finals)) if len(finals) > 1 else 0.0
    print(f"{args.policy}: final regret {finals.mean():.6g} +/- {se:.6g} (1 s.e., {config.trials} trials)")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        for i, log in enumerate(logs):
            harness.emit_csv(log, os.path.join(out_dir, f"{args.policy}_trial{i:03d}.csv"))
        print(f"wrote {config.trials} logs to {out_dir}")
    return 0


def _cmd_suite(args):
    config = harness.load_config(args.config)
    estimate = harness.run_offline_phase(config)
    summary = harness.run_suite(config, estimate, keep_logs=bool(config.paths.out_dir))
    for policy in summary.policies:
        final_m = summary.mean[policy][-1] if len(summary.steps) else 0.0
        final_s = summary.se[policy][-1] if len(summary.steps) else 0.0
        print(f"{policy}: final regret {final_m:.6g} +/- {final_s:.6g} (1 s.e.)")
    if config.paths.out_dir:
        os.makedirs(config.paths.out_dir, exist_ok=True)
        harness.emit_csv(summary, os.path.join(config.paths.out_dir, "summary.csv"))
        for policy, logs in summary.logs.items():
            for i, log in enumerate(logs):
                harness.emit_csv(
                    log, os.path.join(config.paths.out_dir, f"{policy}_trial{i:03d}.csv")
                )
        print(f"wrote results to {config.paths.out_dir}")
    return 0


def _cmd_ingest(args):
    if args.synthetic:
        table = data_mod.synthetic_ratings(seed=args.seed)
        fallback = True
    else:
        if args.ratings is None:
            raise ValidationError("either --ratings PATH or --synthetic is required")
        table = data_mod.load_ratings(args.ratings)
        fallback = False
    print(f"loaded {len(table)} ratings: {table.user_count} users x {table.item_count} items")
    table = data_mod.filter_min_counts(table, args.min_count, args.min_count)
    print(f"filtered at >={args.min_count}: {table.user_count} users x {table.item_count} items")
    factors = data_mod.als_factorize(table, rank=args.rank, reg=args.reg,
                                     sweeps=args.sweeps, seed=args.seed)
    factors = data_mod.FactorModel(
        user_factors=factors.user_factors,
        item_factors=factors.item_factors,
        rank_used=factors.rank_used,
        singular_values=factors.singular_values,
        synthetic_fallback=fallback,
    )
    head = ", ".join(f"{s:.1f}" for s in factors.singular_values[:8])
    print(f"user-factor singular values: {head}, ...")
    if args.d_k is not None:
        d_k = args.d_k
    else:
        d_k = offline.estimate_rank(factors.singular_values**2, rel_threshold=0.02)
        d_k = max(d_k, 1)
    data_mod.save_factors(factors, args.out, d_k=d_k, noise_std=args.noise_std, seed=args.seed)
    print(f"factorized at rank {args.rank}; latent dimension estimate {d_k}; wrote {args.out}")
    return 0


def _cmd_rank(args):
    estimate = offline.load_estimate(args.subspace)
    eigs = np.asarray(estimate.eigenvalues)
    print("eigenvalue profile (descending):")
    for i, val in enumerate(eigs[: args.top]):
        print(f"  {i + 1:3d}  {val:.6g}")
    if len(eigs) > args.top:
        print(f"  ... {len(eigs) - args.top} more")
    rank = offline.estimate_rank(eigs, rel_threshold=args.threshold)
    print(f"estimated latent dimension at threshold {args.threshold}: {rank}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="latent-bandits",
        description="Offline subspace estimation from logged bandit data "
                    "and subspace-accelerated online policies.",
    )
    parser.add_argument("--backend", choices=kernels.available_backends(),
                        help="force a kernel backend for this invocation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("offline", help="run the offline estimation phase")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="estimate output path (defaults to paths.subspace)")
    p.set_defaults(func=_cmd_offline)

    p = sub.add_parser("online", help="run online trials for one policy")
    p.add_argument("--config", required=True)
    p.add_argument("--subspace", required=True)
    p.add_argument("--policy", required=True, choices=harness.POLICY_IDS)
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_online)

    p = sub.add_parser("suite", help="offline phase plus all configured policies")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_suite)

    p = sub.add_parser("ingest", help="factorize a ratings corpus")
    p.add_argument("--ratings")
    p.add_argument("--out", required=True)
    p.add_argument("--synthetic", action="store_true",
                   help="use the built-in synthetic ratings fallback")
    p.add_argument("--min-count", type=int, default=200)
    p.add_argument("--rank", type=int, default=24)
    p.add_argument("--reg", type=float, default=0.1)
    p.add_argument("--sweeps", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d-k", type=int, default=None)
    p.add_argument("--noise-std", type=float, default=0.5)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("rank", help="print an estimate's eigenvalue profile")
    p.add_argument("--subspace", required=True)
    p.add_argument("--threshold", type=float, default=0.1)
    p.add_argument("--top", type=int, default=30)
    p.set_defaults(func=_cmd_rank)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.backend:
            kernels.use_backend(args.backend)
        return args.func(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except (OSError, FormatError, json.JSONDecodeError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
