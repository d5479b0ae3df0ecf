"""Expansion x selection grid at K=3 plus the K=0 baseline, over several seeds.

    python3 scripts/run_ablation.py --seeds 0,1,2,3,4 --out results/modes.csv
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import torch

from sdb.ablation import AblationGrid, ablate, toy_protocol


@dataclass
class ModeGridConfig:
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    K: int = 3
    iterations: int = 500
    out: str = "results/modes.csv"


def format_table(rows: list[dict]) -> str:
    lines = [f"{'cell':<16}{'SR':>16}{'SPL':>16}{'OSR':>8}{'NE':>8}"]
    for r in rows:
        if r["kind"] != "summary":
            continue
        cell = "K=0 baseline" if r["K"] == 0 else f"{r['dem']}+{r['ssm']}"
        lines.append(f"{cell:<16}{r['SR']:>9.3f}+-{r['SR_std']:.3f}{r['SPL']:>9.3f}+-{r['SPL_std']:.3f}{r['OSR']:>8.3f}{r['NE']:>8.3f}")
    return "\n".join(lines)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--K", type=int, default=3)
    ap.add_argument("--iterations", type=int, default=500)
    ap.add_argument("--out", default="results/modes.csv")
    args = ap.parse_args()
    cfg = ModeGridConfig([int(s) for s in args.seeds.split(",")], args.K, args.iterations, args.out)

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    torch.set_num_threads(1)
    mcfg, tcfg, wcfg = toy_protocol()
    tcfg = dataclasses.replace(tcfg, iterations=cfg.iterations)
    Path(cfg.out).parent.mkdir(parents=True, exist_ok=True)
    grid = AblationGrid(["HSG", "Noise"], ["Stable", "Rand"], [0, cfg.K], cfg.seeds)
    t0 = time.perf_counter()
    rows = ablate(grid, mcfg, tcfg, wcfg, cfg.out)
    print(format_table(rows))
    print(f"wrote {cfg.out} in {(time.perf_counter() - t0) / 60:.1f} min")


if __name__ == "__main__":
    main()
