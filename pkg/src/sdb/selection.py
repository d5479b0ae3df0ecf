"""Stability selection (K -> 1): reliability cues, scoring, soft consolidation
and EMA-smoothed hard selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
from torch import Tensor

from .core import StaleState, TokenMatrix, ZeroVector, masked_pool
from .expansion import HypothesisBank

CUE_NAMES = ("A", "C", "S")


def _cosine(a: Tensor, b: Tensor) -> Tensor:
    na, nb = a.norm(dim=-1), b.norm(dim=-1)
    if bool((na < 1e-12).any()) or bool((nb < 1e-12).any()):
        raise ZeroVector("pooled descriptor with (near-)zero norm; cosine undefined")
    return (a * b).sum(-1) / (na * nb)


def negative_entropy(p: Tensor) -> Tensor:
    """``sum p log p`` with ``0 log 0 = 0``, natural log."""
    safe = torch.where(p > 0, p, torch.ones_like(p))
    return (p * torch.log(safe)).sum(-1)


def descriptors(bank: HypothesisBank) -> Tensor:
    """Pooled hypothesis descriptors ``[..., K, H]``."""
    return masked_pool(bank.contexts)


def compute_acs(desc: Tensor, action_dists: Tensor, prev: Tensor | None) -> Tensor:
    """Cue tensor ``[..., K, 3]`` holding (alignment, confidence, stability).

    ``desc``: ``[..., K, H]``; ``action_dists``: ``[..., K, N]``; ``prev`` is the
    previous-step descriptor ``[..., H]`` or None on the first step, in which
    case the current anchor descriptor stands in for it.
    """
    anchor = desc[..., :1, :]
    A = _cosine(desc, anchor.expand_as(desc))
    # self-cosine can round to 1 +- ulp
    A = torch.cat([torch.ones_like(A[..., :1]), A[..., 1:]], -1)
    C = negative_entropy(action_dists)
    if prev is None:
        S = A
    else:
        S = _cosine(desc, prev.unsqueeze(-2).expand_as(desc))
    return torch.stack([A, C, S], -1)


class ReliabilityScorer(nn.Module):
    """Small MLP mapping a 3-cue vector to a scalar reliability score."""

    def __init__(self, hidden: int = 16, dropped: str = ""):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(3, hidden), nn.Tanh(), nn.Linear(hidden, 1))
        keep = torch.tensor([0.0 if name in dropped else 1.0 for name in CUE_NAMES])
        self.register_buffer("cue_keep", keep)

    def forward(self, cues: Tensor) -> Tensor:
        return self.net(cues * self.cue_keep.to(cues.dtype)).squeeze(-1)


def controller_weights(scores: Tensor) -> Tensor:
    return torch.softmax(scores, -1)


def soft_consolidate(bank: HypothesisBank, w: Tensor) -> TokenMatrix:
    """``sum_k w_k H_k``, evaluated as ``H_0 + sum_k w_k (H_k - H_0)`` so that
    identical hypotheses consolidate to exactly ``H_0``."""
    values = bank.contexts.values
    anchor = values[..., :1, :, :]
    offset = (w.unsqueeze(-1).unsqueeze(-1) * (values - anchor)).sum(-3)
    return TokenMatrix(anchor.squeeze(-3) + offset, bank.contexts.mask[..., 0, :])


@dataclass
class ControllerState:
    """Per-episode controller memory. With a batch axis, every row is one episode."""

    ema_weights: Tensor | None = None
    prev_descriptor: Tensor | None = None
    step: int = -1  # last completed step; -1 before the episode starts

    def reset(self) -> None:
        self.ema_weights = None
        self.prev_descriptor = None
        self.step = -1


def smoothing_rate(theta_rho: Tensor) -> Tensor:
    return torch.sigmoid(theta_rho)


def ema_update(ema: Tensor | None, w: Tensor, rho: Tensor | float) -> Tensor:
    if ema is None:
        return w
    return (1 - rho) * ema + rho * w


def stable_select(
    state: ControllerState, w: Tensor, bank: HypothesisBank, rho: Tensor | float, step: int
) -> tuple[Tensor, TokenMatrix, ControllerState]:
    """EMA-smooth the controller weights and commit to their argmax.

    Ties go to the lowest slot index. Returns ``(k_star, H_star, state)``; the
    state's previous descriptor becomes ``pool(H_star)`` (execution rule).
    """
    if state.step + 1 != step:
        raise StaleState(f"controller state at step {state.step} used for step {step}")
    with torch.no_grad():
        ema = ema_update(state.ema_weights, w.detach(), rho)
        k_star = torch.argmax(ema, dim=-1)
        chosen = _gather_slot(bank, k_star)
    state.ema_weights = ema
    state.prev_descriptor = masked_pool(chosen, check=False).detach()
    state.step = step
    return k_star, chosen, state


def random_select(bank: HypothesisBank, rng: np.random.Generator | list[np.random.Generator]) -> tuple[Tensor, TokenMatrix]:
    gens = rng if isinstance(rng, (list, tuple)) else [rng]
    ks = [int(g.integers(bank.K)) for g in gens]
    k = torch.tensor(ks if isinstance(rng, (list, tuple)) else ks[0])
    return k, _gather_slot(bank, k)


def _gather_slot(bank: HypothesisBank, k: Tensor) -> TokenMatrix:
    values, mask = bank.contexts.values, bank.contexts.mask
    if k.dim() == 0:
        return TokenMatrix(values[..., int(k), :, :], mask[..., int(k), :])
    idx = torch.arange(k.shape[0])
    return TokenMatrix(values[idx, k], mask[idx, k])
