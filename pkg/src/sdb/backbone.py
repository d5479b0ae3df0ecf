"""Minimal instruction/evidence encoders and the shared navigation head."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
from torch import Tensor

from .core import ModelConfig, SDBError, TokenMatrix, masked_pool, masked_softmax


class EmptyInstruction(SDBError):
    pass


class Attention(nn.Module):
    """Single-head scaled dot-product attention with an optional additive query bias.

    ``query_bias`` is added after the query projection and broadcasts against
    ``[..., Lq, H]``. Queries whose key set is fully masked receive zeros.
    """

    def __init__(self, dim: int, out_proj: bool = True):
        super().__init__()
        self.q = nn.Linear(dim, dim, bias=False)
        self.k = nn.Linear(dim, dim, bias=False)
        self.v = nn.Linear(dim, dim, bias=False)
        self.o = nn.Linear(dim, dim, bias=False) if out_proj else None
        self.scale = 1.0 / math.sqrt(dim)

    def weights(self, x: Tensor, kv: Tensor, kv_mask: Tensor, query_bias: Tensor | None = None) -> Tensor:
        q = self.q(x)
        if query_bias is not None:
            q = q + query_bias
        k = self.k(kv)
        scores = torch.einsum("...qh,...kh->...qk", q, k) * self.scale
        return masked_softmax(scores, kv_mask.unsqueeze(-2).expand(scores.shape))

    def forward(self, x: Tensor, kv: Tensor, kv_mask: Tensor, query_bias: Tensor | None = None) -> Tensor:
        attn = self.weights(x, kv, kv_mask, query_bias)
        out = attn @ self.v(kv)
        return self.o(out) if self.o is not None else out


def sinusoidal_positions(length: int, dim: int) -> Tensor:
    pos = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    freq = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    table = torch.zeros(length, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos * freq)
    table[:, 1::2] = torch.cos(pos * freq[: dim // 2])
    return table


class Backbone(nn.Module):
    """Token embedding + one self-attention layer for the instruction; a linear
    projection of (neighbor feature, history summary) for every candidate plus a
    learned STOP token; and a bilinear scoring head shared by every pathway."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        H = cfg.hidden_dim
        self.max_len = cfg.max_instruction_len
        self.token_embedding = nn.Embedding(cfg.vocab_size, H)
        nn.init.normal_(self.token_embedding.weight, std=1.0 / math.sqrt(H))
        self.register_buffer("positions", sinusoidal_positions(cfg.max_instruction_len, H).float() * 0.1)
        self.self_attention = Attention(H)
        self.evidence_projection = nn.Linear(2 * cfg.env_feature_dim, H)
        self.stop_embedding = nn.Parameter(torch.randn(H) / math.sqrt(H))
        self.head_projection = nn.Linear(H, H, bias=False)

    def encode_instruction(self, tokens: Tensor, mask: Tensor | None = None) -> TokenMatrix:
        """``tokens``: ``[..., L]`` integer ids; ``mask`` marks real tokens."""
        if mask is None:
            mask = torch.ones(tokens.shape, dtype=torch.bool)
        length = tokens.shape[-1]
        if length == 0 or bool((mask.sum(-1) == 0).any()):
            raise EmptyInstruction("instruction has no tokens")
        if length > self.max_len:
            raise ValueError(f"instruction longer than {self.max_len}")
        x = self.token_embedding(tokens) + self.positions[:length].to(self.token_embedding.weight.dtype)
        x = x + self.self_attention(x, x, mask)
        x = x * mask.unsqueeze(-1).to(x.dtype)
        return TokenMatrix(x, mask)

    def encode_environment(self, neighbor_features: Tensor, history: Tensor, mask: Tensor | None = None) -> TokenMatrix:
        """``neighbor_features``: ``[..., N, F]``; ``history``: ``[..., F]``.

        Returns ``N + 1`` evidence rows; the last one is STOP.
        """
        hist = history.unsqueeze(-2).expand(neighbor_features.shape)
        nb = self.evidence_projection(torch.cat([neighbor_features, hist], -1))
        stop = self.stop_embedding.expand(*nb.shape[:-2], 1, nb.shape[-1])
        values = torch.cat([nb, stop], -2)
        if mask is None:
            mask = torch.ones(values.shape[:-1], dtype=torch.bool)
        else:
            ones = torch.ones(*mask.shape[:-1], 1, dtype=torch.bool)
            mask = torch.cat([mask, ones], -1)
        return TokenMatrix(values * mask.unsqueeze(-1).to(values.dtype), mask)

    def logits(self, context: TokenMatrix, evidence: TokenMatrix) -> Tensor:
        """Candidate scores. ``context`` may carry extra leading dims (e.g. a
        hypothesis axis) in front of the evidence batch dims."""
        q = self.head_projection(masked_pool(context, check=False))
        extra = q.dim() - (evidence.values.dim() - 1)
        ev = evidence.values
        for _ in range(extra):
            ev = ev.unsqueeze(-3)
        return torch.einsum("...h,...nh->...n", q, ev)

    def action_distribution(self, context: TokenMatrix, evidence: TokenMatrix) -> Tensor:
        scores = self.logits(context, evidence)
        mask = evidence.mask
        while mask.dim() < scores.dim():
            mask = mask.unsqueeze(-2)
        return masked_softmax(scores, mask.expand(scores.shape))
