"""Lockstep batched rollouts shared by training and evaluation."""

from __future__ import annotations

import numpy as np
import torch
from torch import Tensor

from .core import TokenMatrix
from .world import STOP, Episode, EpisodeRecord, distances_to, expert_action


def pad_instructions(episodes: list[Episode], max_len: int) -> tuple[Tensor, Tensor]:
    B = len(episodes)
    L = max(len(ep.instruction) for ep in episodes)
    if L > max_len:
        raise ValueError(f"instruction longer than {max_len}")
    tokens = torch.zeros(B, L, dtype=torch.long)
    mask = torch.zeros(B, L, dtype=torch.bool)
    for b, ep in enumerate(episodes):
        n = len(ep.instruction)
        tokens[b, :n] = torch.tensor(ep.instruction, dtype=torch.long)
        mask[b, :n] = True
    return tokens, mask


class BatchWalker:
    """Positions, histories and records for a batch of episodes.

    ``active`` lists the episodes still running; observation tensors are built
    for the active ones only, in that order.
    """

    def __init__(self, episodes: list[Episode], max_steps: int):
        self.episodes = episodes
        self.max_steps = max_steps
        self.records = [EpisodeRecord(ep, [ep.graph.start]) for ep in episodes]
        self.feature_sums = [ep.graph.features[ep.graph.start].astype(np.float64).copy() for ep in episodes]
        self.active = list(range(len(episodes)))
        self.goal_dist = [distances_to(ep.graph, ep.graph.goal) for ep in episodes]

    def position(self, b: int) -> int:
        return self.records[b].trajectory[-1]

    def candidates(self, b: int) -> list[int]:
        return list(self.episodes[b].graph.adjacency[self.position(b)])

    def observe(self, dtype: torch.dtype) -> tuple[Tensor, Tensor, Tensor]:
        """Neighbour features ``[A, N, F]``, their mask ``[A, N]`` and history ``[A, F]``."""
        cands = [self.candidates(b) for b in self.active]
        N = max(len(c) for c in cands)
        F_dim = self.episodes[0].graph.features.shape[1]
        feats = np.zeros((len(cands), N, F_dim))
        mask = np.zeros((len(cands), N), dtype=bool)
        hist = np.zeros((len(cands), F_dim))
        for i, (b, c) in enumerate(zip(self.active, cands)):
            feats[i, : len(c)] = self.episodes[b].graph.features[c]
            mask[i, : len(c)] = True
            hist[i] = self.feature_sums[b] / len(self.records[b].trajectory)
        return (
            torch.as_tensor(feats, dtype=dtype),
            torch.as_tensor(mask),
            torch.as_tensor(hist, dtype=dtype),
        )

    def expert_index(self, b: int, num_slots: int) -> int:
        """Index of the expert action in the padded candidate layout (STOP last)."""
        ep = self.episodes[b]
        a = expert_action(ep.graph, self.position(b), ep.graph.goal, self.goal_dist[b])
        return num_slots if a == STOP else self.candidates(b).index(a)

    def action_from_index(self, b: int, index: int) -> int:
        cands = self.candidates(b)
        return cands[index] if index < len(cands) else STOP

    def apply(self, b: int, action: int) -> None:
        rec = self.records[b]
        rec.actions.append(action)
        if action == STOP:
            rec.stopped = True
            return
        rec.trajectory.append(action)
        self.feature_sums[b] += self.episodes[b].graph.features[action]

    def advance(self, step: int) -> Tensor:
        """Drop finished episodes; returns the kept rows (indices into the old active list)."""
        keep = [i for i, b in enumerate(self.active) if not self.records[b].stopped and step + 1 < self.max_steps]
        self.active = [self.active[i] for i in keep]
        return torch.tensor(keep, dtype=torch.long)


def sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(probs / probs.sum())
    return int(min(np.searchsorted(cdf, rng.random(), side="right"), len(probs) - 1))


def subset(tm: TokenMatrix, keep: Tensor) -> TokenMatrix:
    return TokenMatrix(tm.values[keep], tm.mask[keep])
