"""DAgger-style imitation training of the SDB policy."""

from __future__ import annotations

import copy
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import regularizer as reg
from .checkpoint import save_checkpoint
from .core import DecisionContext, ModelConfig, SDBError
from .model import SDBPolicy
from .rollout import BatchWalker, pad_instructions, sample_index, subset
from .selection import ControllerState
from .world import Episode, WorldConfig, build_splits, sample_training_episode

log = logging.getLogger(__name__)


class NonFiniteLoss(SDBError, ArithmeticError):
    pass


@dataclass
class TrainConfig:
    iterations: int = 300
    batch_size: int = 16
    learning_rate: float = 0.5
    optimizer: str = "sgd"
    dagger_mix: float = 0.5
    dagger_mix_final: float = 1.0
    eval_every: int = 0
    seeds: list[int] = field(default_factory=lambda: [0])
    dem_mode: str = "HSG"
    ssm_mode: str = "Stable"
    dtype: str = "float32"
    log_path: str = ""

    def __post_init__(self):
        if not 0.0 <= self.dagger_mix <= 1.0 or not 0.0 <= self.dagger_mix_final <= 1.0:
            raise ValueError("dagger_mix must lie in [0, 1]")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be sgd or adam")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32

    def mix_at(self, iteration: int) -> float:
        if self.iterations <= 1:
            return self.dagger_mix
        frac = iteration / (self.iterations - 1)
        return self.dagger_mix + frac * (self.dagger_mix_final - self.dagger_mix)


def build_model(mcfg: ModelConfig, tcfg: TrainConfig, seed: int) -> SDBPolicy:
    torch.manual_seed(seed)
    model = SDBPolicy(mcfg, tcfg.dem_mode, tcfg.ssm_mode)
    return model.to(tcfg.torch_dtype)


def episode_rngs(seed: int, iteration: int, count: int) -> list[np.random.Generator]:
    return [np.random.default_rng([seed, iteration, b]) for b in range(count)]


def run_episodes_train(
    model: SDBPolicy,
    episodes: list[Episode],
    rngs: list[np.random.Generator],
    mix: float,
) -> tuple[dict[str, torch.Tensor], list]:
    """Roll out a batch under the DAgger mixture and accumulate the losses.

    Returns the averaged loss terms (``duet``, ``agr``, ``sm``, ``div``, ``sdb``,
    ``total``; all differentiable) and the episode records.
    """
    cfg = model.cfg
    dtype = model.theta_m.dtype
    walker = BatchWalker(episodes, cfg.max_episode_len)
    tokens, tmask = pad_instructions(episodes, cfg.max_instruction_len)
    instr = model.backbone.encode_instruction(tokens, tmask)
    state = ControllerState()
    ce_terms, agr_terms, sm_terms, div_terms = [], [], [], []
    step = 0
    while walker.active:
        feats, nmask, hist = walker.observe(dtype)
        evidence = model.backbone.encode_environment(feats, hist, nmask)
        ctx = DecisionContext(instr, evidence, step)
        active_rngs = [rngs[b] for b in walker.active]
        out = model.decide(ctx, state, training=True, rngs=active_rngs)
        N = feats.shape[1]
        targets = torch.tensor([walker.expert_index(b, N) for b in walker.active])
        ce_terms.append(-out.log_probs.gather(1, targets[:, None]).squeeze(1))
        if out.agr is not None:
            agr_terms.append(out.agr)
            sm_terms.append(out.sm)
            div_terms.append(out.div)
        probs = out.log_probs.detach().exp().double().numpy()
        for i, b in enumerate(walker.active):
            rng = rngs[b]
            if rng.random() < mix:
                idx = sample_index(probs[i], rng)
            else:
                idx = int(targets[i])
            walker.apply(b, walker.action_from_index(b, idx))
        keep = walker.advance(step)
        instr = subset(instr, keep)
        if state.prev_descriptor is not None:
            state.prev_descriptor = state.prev_descriptor[keep]
        step += 1

    duet = torch.cat(ce_terms).mean()
    zero = duet.new_zeros(())
    agr = torch.cat(agr_terms).mean() if agr_terms else zero
    sm = torch.cat(sm_terms).mean() if sm_terms else zero
    div = torch.cat(div_terms).mean() if div_terms else zero
    lambdas = (cfg.lambda_agr, cfg.lambda_sm, cfg.lambda_div)
    sdb = reg.sdb_loss(agr, sm, div, lambdas)
    total = reg.total_loss(duet, sdb, model.theta_omega) if cfg.uses_sdb else duet
    terms = {"duet": duet, "agr": agr, "sm": sm, "div": div, "sdb": sdb, "total": total}
    return terms, walker.records


def breakdown(model: SDBPolicy, terms: dict[str, torch.Tensor]) -> reg.LossBreakdown:
    return reg.LossBreakdown(
        duet=float(terms["duet"].detach()),
        agr=float(terms["agr"].detach()),
        sm=float(terms["sm"].detach()),
        div=float(terms["div"].detach()),
        sdb=float(terms["sdb"].detach()),
        omega=float(model.omega.detach()),
        m=float(model.floor.detach()),
        gamma=float(model.gamma.detach()),
        rho=float(model.rho.detach()),
        total=float(terms["total"].detach()),
    )


def make_optimizer(model: SDBPolicy, tcfg: TrainConfig) -> torch.optim.Optimizer:
    if tcfg.optimizer == "adam":
        return torch.optim.Adam(model.parameters(), lr=tcfg.learning_rate)
    return torch.optim.SGD(model.parameters(), lr=tcfg.learning_rate)


@dataclass
class TrainResult:
    model: SDBPolicy
    losses: list[reg.LossBreakdown]
    evals: list[dict]


def train(
    mcfg: ModelConfig,
    tcfg: TrainConfig,
    wcfg: WorldConfig,
    seed: int | None = None,
    checkpoint_path: str | Path | None = None,
    init_model: SDBPolicy | None = None,
) -> TrainResult:
    """Train from scratch (or from ``init_model``) and optionally write a checkpoint.

    The training CSV goes to ``tcfg.log_path`` when set; held-out evaluations
    every ``eval_every`` updates go next to it with an ``.eval.csv`` suffix.
    """
    from .evaluation import evaluate_model

    seed = tcfg.seeds[0] if seed is None else seed
    model = init_model if init_model is not None else build_model(mcfg, tcfg, seed)
    train_graphs, eval_episodes = build_splits(wcfg)
    opt = make_optimizer(model, tcfg)
    losses: list[reg.LossBreakdown] = []
    evals: list[dict] = []
    writer = None
    handle = None
    if tcfg.log_path:
        handle = open(tcfg.log_path, "w", newline="")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(reg.CSV_COLUMNS)
    try:
        for it in range(tcfg.iterations):
            model.train()
            rngs = episode_rngs(seed, it, tcfg.batch_size)
            episodes = [sample_training_episode(train_graphs, wcfg, r) for r in rngs]
            last_good = copy.deepcopy(model.state_dict())
            terms, _ = run_episodes_train(model, episodes, rngs, tcfg.mix_at(it))
            if not bool(torch.isfinite(terms["total"])):
                model.load_state_dict(last_good)
                if checkpoint_path:
                    save_checkpoint(model, checkpoint_path)
                raise NonFiniteLoss(f"non-finite loss at iteration {it}")
            opt.zero_grad(set_to_none=True)
            terms["total"].backward()
            row = breakdown(model, terms)  # scalars as used in this loss, before the update
            opt.step()
            losses.append(row)
            if writer is not None:
                writer.writerow([it] + [repr(v) for v in list(row.row(it).values())[1:]])
            if tcfg.eval_every and (it + 1) % tcfg.eval_every == 0:
                table, _ = evaluate_model(model, eval_episodes, mcfg.success_threshold, seed=seed)
                evals.append({"iteration": it + 1, **table.as_dict()})
                log.info("iter %d eval %s", it + 1, table)
    finally:
        if handle is not None:
            handle.close()
    if tcfg.log_path and evals:
        with open(str(tcfg.log_path) + ".eval.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(evals[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(evals)
    if checkpoint_path:
        save_checkpoint(model, checkpoint_path)
    return TrainResult(model, losses, evals)
