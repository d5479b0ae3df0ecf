"""Central finite-difference checks of analytic gradients."""

from __future__ import annotations

import dataclasses
from typing import Callable

import numpy as np
import torch
from torch import Tensor

from .core import ModelConfig
from .training import TrainConfig, build_model, run_episodes_train
from .world import WorldConfig, graph_from_edges, make_episode


def numeric_gradient(fn: Callable[[], Tensor], param: Tensor, eps: float) -> Tensor:
    """``(f(p + eps e_i) - f(p - eps e_i)) / 2 eps`` for every entry of ``param``."""
    grad = torch.zeros_like(param)
    flat = param.data.view(-1)
    g = grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            up = float(fn())
            flat[i] = orig - eps
            down = float(fn())
            flat[i] = orig
            g[i] = (up - down) / (2 * eps)
    return grad


def relative_error(analytic: Tensor, numeric: Tensor, floor: float = 1e-8) -> float:
    """Largest absolute discrepancy scaled by the group's largest gradient entry."""
    scale = max(float(analytic.abs().max()), float(numeric.abs().max()), floor)
    return float((analytic - numeric).abs().max()) / scale


def grad_check(fn: Callable[[], Tensor], groups: dict[str, list[Tensor]], eps: float = 1e-6) -> dict[str, float]:
    """Per-group max relative error between autograd and central differences."""
    params = [p for ps in groups.values() for p in ps]
    for p in params:
        p.grad = None
    fn().backward()
    report = {}
    for name, ps in groups.items():
        analytic = torch.cat([(p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1) for p in ps])
        numeric = torch.cat([numeric_gradient(fn, p, eps).reshape(-1) for p in ps])
        report[name] = relative_error(analytic, numeric)
    return report


TOY_MODEL = ModelConfig(K=3, rank=2, hidden_dim=8, max_instruction_len=4, max_episode_len=1, env_feature_dim=6)


def toy_episodes(wcfg: WorldConfig, seed: int = 0) -> list:
    """Two one-hop episodes on small fixed graphs (instructions of 2-3 tokens)."""
    wcfg = dataclasses.replace(wcfg, min_hops=1, distractor_rate=0.5, max_instruction_len=4)
    rng = np.random.default_rng(seed)
    graphs = [
        graph_from_edges([(0, 1), (1, 2), (2, 3), (0, 3)], wcfg, seed=seed),
        graph_from_edges([(0, 1), (0, 2), (0, 3), (3, 4)], wcfg, seed=seed + 1),
    ]
    return [make_episode(g, wcfg, rng) for g in graphs]


def model_grad_check(eps: float = 1e-6, seed: int = 0, mcfg: ModelConfig = TOY_MODEL) -> dict[str, float]:
    """Gradient check of the one-step training objective over every parameter group."""
    wcfg = WorldConfig(env_feature_dim=mcfg.env_feature_dim)
    tcfg = TrainConfig(dtype="float64")
    model = build_model(mcfg, tcfg, seed)
    episodes = toy_episodes(wcfg, seed)

    def objective() -> Tensor:
        rngs = [np.random.default_rng([seed, b]) for b in range(len(episodes))]
        terms, _ = run_episodes_train(model, episodes, rngs, mix=0.0)
        return terms["total"]

    groups = {name: [p for _, p in ps] for name, ps in model.parameter_groups().items() if ps}
    return grad_check(objective, groups, eps)
