"""Greedy execution, episode logs, metric tables and the planning change rate."""

from __future__ import annotations

import json
import statistics
from pathlib import Path

import numpy as np
import torch

from .core import DecisionContext, SDBError
from .rollout import BatchWalker, pad_instructions, subset
from .selection import ControllerState
from .world import STOP, Episode, EpisodeRecord, MetricsTable, compute_metrics, episode_metrics

JSONL_SCHEMA = 1


class TooFewSteps(SDBError):
    pass


def _action_name(record: EpisodeRecord, walker: BatchWalker, b: int, index: int) -> str:
    action = walker.action_from_index(b, index)
    if action == STOP:
        return "stop"
    return f"goto lm{int(record.episode.graph.landmarks[action])}"


@torch.no_grad()
def rollout_greedy(model, episodes: list[Episode], seed: int = 0, batch_size: int = 64) -> list[EpisodeRecord]:
    """Execute every episode with argmax actions and the model's selection rule."""
    was_training = model.training
    model.eval()
    records: list[EpisodeRecord] = []
    try:
        for start in range(0, len(episodes), batch_size):
            chunk = episodes[start : start + batch_size]
            rngs = [np.random.default_rng([seed, 99991, start + b]) for b in range(len(chunk))]
            records.extend(_rollout_chunk(model, chunk, rngs))
    finally:
        model.train(was_training)
    return records


def _rollout_chunk(model, episodes: list[Episode], rngs) -> list[EpisodeRecord]:
    cfg = model.cfg
    dtype = model.theta_m.dtype
    walker = BatchWalker(episodes, cfg.max_episode_len)
    tokens, tmask = pad_instructions(episodes, cfg.max_instruction_len)
    instr = model.backbone.encode_instruction(tokens, tmask)
    state = ControllerState()
    step = 0
    while walker.active:
        feats, nmask, hist = walker.observe(dtype)
        evidence = model.backbone.encode_environment(feats, hist, nmask)
        ctx = DecisionContext(instr, evidence, step)
        out = model.decide(ctx, state, training=False, rngs=[rngs[b] for b in walker.active])
        order = torch.argsort(out.log_probs, dim=-1, descending=True, stable=True)
        for i, b in enumerate(walker.active):
            rec = walker.records[b]
            best, alt = int(order[i, 0]), int(order[i, 1])
            rec.plans.append(f"{_action_name(rec, walker, b, best)} alt {_action_name(rec, walker, b, alt)}")
            if out.slot is not None:
                rec.slots.append(int(out.slot[i]))
                rec.weights.append([float(x) for x in out.weights[i]])
            if out.ema_weights is not None:
                rec.ema_weights.append([float(x) for x in out.ema_weights[i]])
            walker.apply(b, walker.action_from_index(b, best))
        keep = walker.advance(step)
        instr = subset(instr, keep)
        if state.prev_descriptor is not None:
            state.prev_descriptor = state.prev_descriptor[keep]
        if state.ema_weights is not None:
            state.ema_weights = state.ema_weights[keep]
        step += 1
    return walker.records


def evaluate_model(model, episodes: list[Episode], delta: float, seed: int = 0, jsonl_path: str | Path | None = None):
    records = rollout_greedy(model, episodes, seed=seed)
    table = compute_metrics(records, delta)
    if jsonl_path:
        write_episode_log(records, delta, jsonl_path)
    return table, records


def evaluate(checkpoint: str | Path, episodes: list[Episode], delta: float, seed: int = 0, jsonl_path=None):
    from .checkpoint import load_checkpoint

    model = load_checkpoint(checkpoint)
    return evaluate_model(model, episodes, delta, seed=seed, jsonl_path=jsonl_path)


def episode_log_entry(record: EpisodeRecord, delta: float) -> dict:
    ep = record.episode
    return {
        "schema": JSONL_SCHEMA,
        "episode_id": ep.episode_id,
        "graph_seed": ep.graph.seed,
        "start": ep.graph.start,
        "goal": ep.graph.goal,
        "instruction": list(ep.instruction),
        "trajectory": list(record.trajectory),
        "stopped": record.stopped,
        "slots": record.slots,
        "weights": record.weights,
        "ema_weights": record.ema_weights,
        "plans": record.plans,
        **episode_metrics(record, delta),
    }


def write_episode_log(records: list[EpisodeRecord], delta: float, path: str | Path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(episode_log_entry(rec, delta)) + "\n")


# -- planning change rate ------------------------------------------------------


def levenshtein(a: list[str], b: list[str]) -> int:
    """Token-level edit distance with unit insert/delete/substitute costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ta in enumerate(a, 1):
        cur = [i]
        for j, tb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ta != tb)))
        prev = cur
    return prev[-1]


def change_rate(prev_plan: str, next_plan: str) -> float:
    a, b = prev_plan.split(), next_plan.split()
    return levenshtein(b, a) / max(len(b), len(a), 1)


def spcr(plans: list[str]) -> list[float]:
    """Per-step change rates between consecutive plans of one episode."""
    if len(plans) < 2:
        raise TooFewSteps("need at least two plans")
    return [change_rate(plans[t], plans[t + 1]) for t in range(len(plans) - 1)]


def spcr_summary(episodes: list[list[str]], first_n: int = 9) -> dict:
    """Mean change rate per step index across episodes, plus the mean and
    standard deviation of those per-step means over the first ``first_n`` steps."""
    per_step: dict[int, list[float]] = {}
    for plans in episodes:
        if len(plans) < 2:
            continue
        for t, r in enumerate(spcr(plans)):
            per_step.setdefault(t, []).append(r)
    if not per_step:
        raise TooFewSteps("no episode has two or more plans")
    curve = [statistics.fmean(per_step[t]) for t in sorted(per_step)]
    window = curve[:first_n]
    return {
        "per_step": curve,
        "mean": statistics.fmean(window),
        "std": statistics.pstdev(window) if len(window) > 1 else 0.0,
        "window": len(window),
    }


def read_plan_log(path: str | Path) -> list[list[str]]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append([str(p) for p in json.loads(line)["plans"]])
    return out
