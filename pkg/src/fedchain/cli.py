"""Command-line interface: run experiments, verify chain exports, show profiles."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config, with_overrides
from .consensus import weighted_value
from .ledger import verify_chain_export
from .netsim import build_profiles
from .runner import RunnerError, assign_roles, run_experiment


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return with_overrides(
        cfg,
        seed=args.seed,
        rounds=args.rounds,
        consensus=args.consensus,
        out_dir=args.out_dir,
    )


def cmd_run(args) -> int:
    cfg = _load(args)
    result = run_experiment(cfg)
    last = result.reports[-1]
    print(f"completed {len(result.reports)} rounds under {cfg.consensus}")
    print(f"final global accuracy: {result.final_global_accuracy:.4f}")
    print(f"chain height: {len(result.chain) - 1}, tip {last.block_hash.hex()[:16]}…")
    for name in sorted(result.files):
        print(f"wrote {result.files[name]}")
    return 0


def cmd_verify_chain(args) -> int:
    data = Path(args.chain).read_bytes()
    bad = verify_chain_export(data)
    if bad is None:
        n = sum(1 for line in data.split(b"\n") if line)
        print(f"chain ok ({n} blocks)")
        return 0
    print(f"chain INVALID: first bad block at height {bad}")
    return 1


def cmd_profiles(args) -> int:
    cfg = _load(args)
    import dataclasses

    from .rng import derive_seed

    topo = dataclasses.replace(cfg.topology, seed=derive_seed(cfg.seed, "topology"))
    profiles = build_profiles(topo)
    roles = assign_roles(cfg, profiles)
    members = set(roles.package_list.members)
    print(f"{'node':>4}  {'role':<4}  {'D (B/s)':>10}  {'TD (s)':>8}  {'WV':>12}")
    for p in profiles:
        if p.node in roles.lt:
            role = "lt"
        elif p.node in members:
            role = "pa"
        else:
            role = "bp"
        wv = weighted_value(p, cfg.powls)
        print(f"{p.node:>4}  {role:<4}  {p.link_speed_d:>10.0f}  {p.delay_td:>8.4f}  {wv:>12.2f}")
    print(f"package list (descending score): {list(roles.package_list.members)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedchain",
        description="Deterministic blockchain-anchored federated learning simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write metric files")
    run.add_argument("--config", help="TOML config file (defaults used if omitted)")
    run.add_argument("--seed", type=int, help="override the experiment seed")
    run.add_argument("--rounds", type=int, help="override the round count")
    run.add_argument("--consensus", choices=["powls", "pos"], help="producer selection rule")
    run.add_argument("--out-dir", help="output directory")
    run.set_defaults(func=cmd_run)

    verify = sub.add_parser("verify-chain", help="verify an exported chain file")
    verify.add_argument("--chain", required=True, help="chain.jsonl file to verify")
    verify.set_defaults(func=cmd_verify_chain)

    profiles = sub.add_parser("profiles", help="print the node score table")
    profiles.add_argument("--config", help="TOML config file")
    profiles.add_argument("--seed", type=int, help="override the experiment seed")
    profiles.add_argument("--rounds", type=int, help=argparse.SUPPRESS)
    profiles.add_argument("--consensus", choices=["powls", "pos"], help=argparse.SUPPRESS)
    profiles.add_argument("--out-dir", help=argparse.SUPPRESS)
    profiles.set_defaults(func=cmd_profiles)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RunnerError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
