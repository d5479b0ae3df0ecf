"""Reliability-cue ablation: retrain with subsets of the (A, C, S) cues zeroed
before scoring and compare held-out SR/SPL."""

from __future__ import annotations

import argparse
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import torch

from sdb.ablation import cue_ablation, toy_protocol


@dataclass
class CueConfig:
    drops: list[str] = field(default_factory=lambda: ["", "A", "C", "S", "ACS"])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    iterations: int = 500
    out: str = "results/cues.csv"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--drops", default="none,A,C,S,ACS", help="comma list; 'none' keeps every cue")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--iterations", type=int, default=500)
    ap.add_argument("--out", default="results/cues.csv")
    args = ap.parse_args()
    drops = ["" if d == "none" else d for d in args.drops.split(",")]
    cfg = CueConfig(drops, [int(s) for s in args.seeds.split(",")], args.iterations, args.out)

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    torch.set_num_threads(1)
    mcfg, tcfg, wcfg = toy_protocol()
    tcfg = dataclasses.replace(tcfg, iterations=cfg.iterations)
    Path(cfg.out).parent.mkdir(parents=True, exist_ok=True)
    rows = cue_ablation(cfg.drops, cfg.seeds, mcfg, tcfg, wcfg, cfg.out)
    for r in rows:
        if r["kind"] == "summary":
            print(f"drop={r['drop']:<5} SR {r['SR']:.3f}+-{r['SR_std']:.3f}  SPL {r['SPL']:.3f}+-{r['SPL_std']:.3f}")


if __name__ == "__main__":
    main()
