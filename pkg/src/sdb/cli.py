"""Command line entry point: ``sdb {train,eval,ablate,spcr,gradcheck}``.

Every ModelConfig / TrainConfig / WorldConfig key is also a ``--key`` flag;
flags override values read from ``--config``. Exit codes: 0 success,
2 validation error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

import torch

from .core import ConfigError, ModelConfig, SDBError, apply_overrides, parse_config_text

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


def _config_classes():
    from .training import TrainConfig
    from .world import WorldConfig

    return ModelConfig, TrainConfig, WorldConfig


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    seen = set()
    for cls in _config_classes():
        for f in dataclasses.fields(cls):
            if f.name in seen:
                continue
            seen.add(f.name)
            p.add_argument(f"--{f.name}", dest=f"cfg_{f.name}", metavar="VALUE")


def _configs(args) -> tuple:
    overrides: dict[str, str] = {}
    if args.config:
        with open(args.config) as fh:
            overrides.update(parse_config_text(fh.read()))
    for key, value in vars(args).items():
        if key.startswith("cfg_") and value is not None:
            overrides[key[4:]] = value
    known = {f.name for cls in _config_classes() for f in dataclasses.fields(cls)}
    unknown = set(overrides) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    ModelCfg, TrainCfg, WorldCfg = _config_classes()
    try:
        return tuple(apply_overrides(cls(), overrides) for cls in (ModelCfg, TrainCfg, WorldCfg))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _csv_list(text: str, cast=str) -> list:
    return [cast(x) for x in text.split(",") if x != ""]


def cmd_train(args) -> int:
    from .checkpoint import load_checkpoint
    from .training import train

    mcfg, tcfg, wcfg = _configs(args)
    init = load_checkpoint(args.resume) if args.resume else None
    seed = mcfg.seed if args.cfg_seed is not None else None
    result = train(mcfg, tcfg, wcfg, seed=seed, checkpoint_path=args.checkpoint, init_model=init)
    last = result.losses[-1] if result.losses else None
    print(json.dumps({"iterations": len(result.losses), "last": dataclasses.asdict(last) if last else None, "evals": result.evals}))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .evaluation import evaluate_model
    from .world import build_splits, make_episode, sample_endpoints

    mcfg, tcfg, wcfg = _configs(args)
    model = load_checkpoint(args.checkpoint)
    if args.ssm_mode_override:
        model.ssm_mode = args.ssm_mode_override
    train_graphs, episodes = build_splits(wcfg)
    if args.split == "train":
        import numpy as np

        rng = np.random.default_rng(wcfg.data_seed)
        episodes = [make_episode(g.with_endpoints(*sample_endpoints(g, wcfg.min_hops, rng)), wcfg, rng) for g in train_graphs]
    delta = mcfg.success_threshold if args.cfg_success_threshold is not None else model.cfg.success_threshold
    table, _ = evaluate_model(model, episodes, delta, seed=mcfg.seed, jsonl_path=args.jsonl)
    print(json.dumps(table.as_dict()))
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .ablation import AblationGrid, ablate, cue_ablation

    mcfg, tcfg, wcfg = _configs(args)
    seeds = list(tcfg.seeds)
    if args.cues is not None:
        drops = ["" if d in ("none", "") else d for d in _csv_list(args.cues)]
        rows = cue_ablation(drops, seeds, mcfg, tcfg, wcfg, args.out)
    else:
        grid = AblationGrid(_csv_list(args.dem), _csv_list(args.ssm), _csv_list(args.grid_K, int), seeds)
        rows = ablate(grid, mcfg, tcfg, wcfg, args.out)
    for r in rows:
        if r["kind"] == "summary":
            print(json.dumps(r))
    return EXIT_OK


def cmd_spcr(args) -> int:
    from .evaluation import read_plan_log, spcr_summary

    plans = read_plan_log(args.plans)
    print(json.dumps(spcr_summary(plans, args.first_n)))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import model_grad_check

    report = model_grad_check(eps=args.eps, seed=args.seed)
    print(json.dumps(report, indent=1))
    return EXIT_OK if max(report.values()) < args.tolerance else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdb", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="DAgger imitation training")
    _add_config_flags(p)
    p.add_argument("--checkpoint", help="where to write the trained checkpoint")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["heldout", "train"], default="heldout")
    p.add_argument("--jsonl", help="per-episode log")
    p.add_argument("--selection", dest="ssm_mode_override", choices=["Stable", "Rand"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="mode grid, K sweep or cue ablation")
    _add_config_flags(p)
    p.add_argument("--dem", default="HSG,Noise")
    p.add_argument("--ssm", default="Stable,Rand")
    p.add_argument("--grid-K", default="3", help="comma list of K values; 0 = baseline (use --seeds for the seed list)")
    p.add_argument("--cues", help="comma list of dropped-cue sets, e.g. none,S,ACS")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("spcr", help="step-wise planning change rate of a plan log")
    p.add_argument("plans", help="JSONL with a 'plans' list per line")
    p.add_argument("--first-n", type=int, default=9)
    p.set_defaults(func=cmd_spcr)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check at toy dims")
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        return args.func(args)
    except ArithmeticError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SDBError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
