"""Experiment grids: expansion x selection modes, hypothesis count sweeps and
reliability-cue ablations, each trained and evaluated over several seeds.

Results CSV (schema 1), one row per trained-and-evaluated run plus one
summary row per cell:

    schema, kind, dem, ssm, K, drop, seed, TL, NE, SR, OSR, SPL,
    TL_std, NE_std, SR_std, OSR_std, SPL_std

``kind`` is ``run`` or ``summary``; summary rows hold the across-seed mean in
the metric columns, the population std in the ``*_std`` columns and ``all``
as the seed. The ``K = 0`` baseline uses ``-`` for both modes.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

from .core import ModelConfig
from .evaluation import evaluate_model
from .training import TrainConfig, train
from .world import WorldConfig, build_splits

log = logging.getLogger(__name__)

RESULTS_SCHEMA = 1
METRICS = ("TL", "NE", "SR", "OSR", "SPL")
COLUMNS = ("schema", "kind", "dem", "ssm", "K", "drop", "seed") + METRICS + tuple(f"{m}_std" for m in METRICS)


def toy_protocol() -> tuple[ModelConfig, TrainConfig, WorldConfig]:
    """Base configuration shared by every experiment grid.

    Adam at 0.01 for 500 updates of 16 episodes; the held-out set is 10 graphs
    with 30 episodes each so that arm differences exceed evaluation noise.
    """
    return (
        ModelConfig(),
        TrainConfig(iterations=500, batch_size=16, optimizer="adam", learning_rate=0.01),
        WorldConfig(eval_episodes_per_graph=30),
    )


@dataclass
class AblationGrid:
    dem_modes: list[str] = field(default_factory=lambda: ["HSG", "Noise"])
    ssm_modes: list[str] = field(default_factory=lambda: ["Stable", "Rand"])
    K_values: list[int] = field(default_factory=lambda: [3])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])

    def __post_init__(self):
        if not (self.dem_modes and self.ssm_modes and self.K_values and self.seeds):
            raise ValueError("every grid axis needs at least one value")


def train_and_evaluate(mcfg: ModelConfig, tcfg: TrainConfig, wcfg: WorldConfig, dem: str, seed: int, ssm_modes: list[str]) -> dict[str, dict]:
    """Train one model and evaluate it under each execution-time selection rule.

    Selection only acts at execution, so the same trained weights serve every
    entry of ``ssm_modes``.
    """
    _, eval_episodes = build_splits(wcfg)
    run_cfg = dataclasses.replace(tcfg, dem_mode=dem, ssm_mode=ssm_modes[0], log_path="")
    model = train(mcfg, run_cfg, wcfg, seed=seed).model
    out = {}
    for ssm in ssm_modes:
        model.ssm_mode = ssm
        table, _ = evaluate_model(model, eval_episodes, mcfg.success_threshold, seed=seed)
        out[ssm] = table.as_dict()
    return out


def _row(kind: str, dem: str, ssm: str, K: int, drop: str, seed, metrics: dict, stds: dict | None = None) -> dict:
    row = {"schema": RESULTS_SCHEMA, "kind": kind, "dem": dem, "ssm": ssm, "K": K, "drop": drop, "seed": seed}
    row.update({m: metrics[m] for m in METRICS})
    row.update({f"{m}_std": (stds[m] if stds else "") for m in METRICS})
    return row


def summarize(rows: list[dict]) -> list[dict]:
    cells: dict[tuple, list[dict]] = {}
    for r in rows:
        if r["kind"] == "run":
            cells.setdefault((r["dem"], r["ssm"], r["K"], r["drop"]), []).append(r)
    out = []
    for (dem, ssm, K, drop), runs in cells.items():
        means = {m: statistics.fmean(float(r[m]) for r in runs) for m in METRICS}
        stds = {m: statistics.pstdev([float(r[m]) for r in runs]) for m in METRICS}
        out.append(_row("summary", dem, ssm, K, drop, "all", means, stds))
    return out


def ablate(grid: AblationGrid, mcfg: ModelConfig, tcfg: TrainConfig, wcfg: WorldConfig, out_path: str | Path | None = None) -> list[dict]:
    """Run every (dem, K) training cell for every seed; ``K = 0`` is the
    no-SDB baseline and is trained once per seed regardless of the modes."""
    rows: list[dict] = []
    for K in grid.K_values:
        cfg = dataclasses.replace(mcfg, K=K)
        dems = ["-"] if K == 0 else grid.dem_modes
        for dem in dems:
            for seed in grid.seeds:
                t0 = time.time()
                if K == 0:
                    res = train_and_evaluate(cfg, tcfg, wcfg, "HSG", seed, ["Stable"])
                    rows.append(_row("run", "-", "-", 0, "", seed, res["Stable"]))
                else:
                    res = train_and_evaluate(cfg, tcfg, wcfg, dem, seed, grid.ssm_modes)
                    for ssm in grid.ssm_modes:
                        rows.append(_row("run", dem, ssm, K, "", seed, res[ssm]))
                log.info("K=%d dem=%s seed=%d done in %.1fs: %s", K, dem, seed, time.time() - t0, res)
    rows += summarize(rows)
    if out_path:
        write_results(rows, out_path)
    return rows


def cue_ablation(drops: list[str], seeds: list[int], mcfg: ModelConfig, tcfg: TrainConfig, wcfg: WorldConfig, out_path: str | Path | None = None) -> list[dict]:
    """Train with the listed reliability cues zeroed before scoring. An empty
    string is the full model."""
    rows: list[dict] = []
    for drop in drops:
        cfg = dataclasses.replace(mcfg, dropped_cues=drop)
        for seed in seeds:
            res = train_and_evaluate(cfg, tcfg, wcfg, tcfg.dem_mode, seed, [tcfg.ssm_mode])
            rows.append(_row("run", tcfg.dem_mode, tcfg.ssm_mode, cfg.K, drop or "none", seed, res[tcfg.ssm_mode]))
    rows += summarize(rows)
    if out_path:
        write_results(rows, out_path)
    return rows


def write_results(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(COLUMNS), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def read_results(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summary_lookup(rows: list[dict]) -> dict[tuple, dict]:
    """Map ``(dem, ssm, K, drop)`` to the summary row."""
    return {(r["dem"], r["ssm"], int(r["K"]), r["drop"]): r for r in rows if r["kind"] == "summary"}
