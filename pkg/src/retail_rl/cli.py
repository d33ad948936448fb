"""Command line entry point: ``retail-rl {generate-items,train,evaluate,audit}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .items import CopulaModel, generate_items, write_items_csv


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat JSON config; overlays the preset")
    p.add_argument("--preset", default="desk", choices=sorted(harness.NAMED_CONFIGS))
    p.add_argument("--seed", type=int)
    p.add_argument("--scenario", choices=sorted(harness.market.SCENARIO_SIGMA))
    p.add_argument("--agent", choices=sorted(harness.AGENTS))
    p.add_argument("--quantiles", type=int, help="number of quantile levels")
    p.add_argument("--waste-weight", type=float)
    p.add_argument("--out", type=Path, required=True, help="output directory")


def resolve_config(args) -> harness.ExperimentConfig:
    d = dict(harness.DESK_AGENT)
    d.update(harness.NAMED_CONFIGS[args.preset])
    if args.config is not None:
        with open(args.config) as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise harness.ConfigError(["config file must hold a single JSON object"])
        d.update(data)
    flags = {"seed": args.seed, "scenario": args.scenario, "agent": args.agent,
             "n_quantiles": args.quantiles, "waste_weight": args.waste_weight}
    d.update({k: v for k, v in flags.items() if v is not None})
    return harness.with_schedules(d)


def cmd_generate_items(args) -> int:
    items = generate_items(CopulaModel(), args.count, np.random.default_rng(args.seed))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_items_csv(items, args.out)
    print(f"wrote {len(items)} items to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    harness.save_config(cfg, _mkdir(args.out) / "config.json")

    def progress(step, agent):
        if args.verbose and (step + 1) % 100 == 0:
            print(f"step {step + 1}/{cfg.run.train_steps} updates {agent.updates}", file=sys.stderr)

    result = harness.run_training(cfg, args.out, progress=progress)
    print(f"trained {cfg.run.agent}: {result.wall_updates} updates, checkpoint {result.checkpoints[-1]}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args)
    checkpoint = args.checkpoint or args.out / "checkpoint.npz"
    agent = harness.load_agent(cfg, checkpoint)
    result = harness.run_evaluation(cfg, agent, trace=args.trace)
    paths = harness.emit_results(result, _mkdir(args.out), extra={"checkpoint": str(checkpoint)})
    s = result.summary()["norm_profit_pct"]
    print(f"normalized profit {s['mean']:.1f}% (median {s['median']:.1f}, MAD {s['mad']:.1f}, "
          f"s.e. {s['std_error']:.1f}); results in {paths['generations']}")
    return 0


def cmd_audit(args) -> int:
    cfg = resolve_config(args)
    report = harness.audit(cfg, episodes=args.episodes, steps=args.steps, items_per_episode=args.items)
    _mkdir(args.out)
    (args.out / "audit.json").write_text(json.dumps(report.__dict__, indent=2, sort_keys=True) + "\n")
    print(f"audit {'passed' if report.ok else 'FAILED'}: {report}")
    return 0 if report.ok else 1


def _mkdir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="retail-rl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-items", help="sample pseudo-items to CSV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--out", type=Path, required=True, help="CSV file")
    p.set_defaults(func=cmd_generate_items)

    p = sub.add_parser("train", help="train an agent and write checkpoint + training log")
    _add_common(p)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="greedy evaluation against the (s, Q) baseline")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, help="defaults to <out>/checkpoint.npz")
    p.add_argument("--trace", action="store_true", help="also write a per-step trace of generation 0")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("audit", help="random-policy conservation / reward / LIFO sweep")
    _add_common(p)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--items", type=int, default=10)
    p.set_defaults(func=cmd_audit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except harness.ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
