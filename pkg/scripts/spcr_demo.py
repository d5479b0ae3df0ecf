"""Train one model briefly, roll it out on the held-out set with plan logging
and print the per-step planning change rate for Stable and Rand selection."""

from __future__ import annotations

import argparse
import dataclasses
from dataclasses import dataclass
from pathlib import Path

import torch

from sdb.ablation import toy_protocol
from sdb.evaluation import evaluate_model, read_plan_log, spcr_summary
from sdb.training import train
from sdb.world import build_splits


@dataclass
class DemoConfig:
    seed: int = 0
    iterations: int = 200
    first_n: int = 9
    out_dir: str = "results/spcr"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--iterations", type=int, default=200)
    ap.add_argument("--first-n", type=int, default=9)
    ap.add_argument("--out-dir", default="results/spcr")
    args = ap.parse_args()
    cfg = DemoConfig(args.seed, args.iterations, args.first_n, args.out_dir)

    torch.set_num_threads(1)
    mcfg, tcfg, wcfg = toy_protocol()
    model = train(mcfg, dataclasses.replace(tcfg, iterations=cfg.iterations), wcfg, seed=cfg.seed).model
    _, episodes = build_splits(wcfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for mode in ("Stable", "Rand"):
        model.ssm_mode = mode
        log = out / f"{mode.lower()}.jsonl"
        table, _ = evaluate_model(model, episodes, mcfg.success_threshold, seed=cfg.seed, jsonl_path=log)
        summary = spcr_summary(read_plan_log(log), cfg.first_n)
        curve = " ".join(f"{r:.3f}" for r in summary["per_step"][: cfg.first_n])
        print(f"{mode:<7} SR {table.SR:.3f}  SPCR {summary['mean']:.3f}+-{summary['std']:.3f}  per step: {curve}")


if __name__ == "__main__":
    main()
