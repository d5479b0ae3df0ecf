"""Held-out SR/SPL as a function of the hypothesis count K (HSG expansion,
stable selection); K=0 is the baseline without the operator."""

from __future__ import annotations

import argparse
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import torch

from sdb.ablation import AblationGrid, ablate, toy_protocol


@dataclass
class SweepConfig:
    K_values: list[int] = field(default_factory=lambda: [0, 2, 3, 5])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    iterations: int = 500
    out: str = "results/k_sweep.csv"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--K", default="0,2,3,5")
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--iterations", type=int, default=500)
    ap.add_argument("--out", default="results/k_sweep.csv")
    args = ap.parse_args()
    cfg = SweepConfig([int(k) for k in args.K.split(",")], [int(s) for s in args.seeds.split(",")], args.iterations, args.out)

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    torch.set_num_threads(1)
    mcfg, tcfg, wcfg = toy_protocol()
    tcfg = dataclasses.replace(tcfg, iterations=cfg.iterations)
    Path(cfg.out).parent.mkdir(parents=True, exist_ok=True)
    rows = ablate(AblationGrid(["HSG"], ["Stable"], cfg.K_values, cfg.seeds), mcfg, tcfg, wcfg, cfg.out)
    print(f"{'K':>3}{'SR':>16}{'SPL':>16}")
    for r in sorted((r for r in rows if r["kind"] == "summary"), key=lambda r: r["K"]):
        print(f"{r['K']:>3}{r['SR']:>9.3f}+-{r['SR_std']:.3f}{r['SPL']:>9.3f}+-{r['SPL_std']:.3f}")


if __name__ == "__main__":
    main()
