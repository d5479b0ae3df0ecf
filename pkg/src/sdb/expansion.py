"""Diversity expansion (1 -> K): state summary, low-rank shift basis, slot
gating, alignment residuals and the fused hypothesis bank.

All tensors may carry a leading batch axis; the hypothesis axis is placed
right after it (``[B, K, L, H]``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
from torch import Tensor

from .backbone import Attention
from .core import DecisionContext, ModelConfig, TokenMatrix, masked_pool


@dataclass(frozen=True)
class HypothesisBank:
    contexts: TokenMatrix  # values [..., K, L, H], mask [..., K, L]
    gating: Tensor  # [..., K]
    anchor_index: int = 0

    @property
    def K(self) -> int:
        return self.gating.shape[-1]

    def context(self, k: int) -> TokenMatrix:
        return TokenMatrix(self.contexts.values[..., k, :, :], self.contexts.mask[..., k, :])


class FusionBlock(nn.Module):
    """Instruction -> evidence cross-attention followed by a feed-forward layer,
    both residual. Parameters are shared by every hypothesis."""

    def __init__(self, dim: int):
        super().__init__()
        self.cross = Attention(dim)
        self.ff_in = nn.Linear(dim, 2 * dim)
        self.ff_out = nn.Linear(2 * dim, dim)

    def feed_forward(self, x: Tensor) -> Tensor:
        return self.ff_out(torch.tanh(self.ff_in(x)))

    def forward(self, tokens: TokenMatrix, evidence: TokenMatrix, query_bias: Tensor | None = None) -> TokenMatrix:
        x = tokens.values
        ev, ev_mask = evidence.values, evidence.mask
        while ev.dim() < x.dim():
            ev, ev_mask = ev.unsqueeze(-3), ev_mask.unsqueeze(-2)
        ev = ev.expand(*x.shape[:-2], *ev.shape[-2:])
        ev_mask = ev_mask.expand(*x.shape[:-2], ev_mask.shape[-1])
        x = x + self.cross(x, ev, ev_mask, query_bias)
        x = x + self.feed_forward(x)
        return tokens.with_values(x * tokens.mask.unsqueeze(-1).to(x.dtype))


class HeadShiftingGenerator(nn.Module):
    """Evidence-conditioned hypothesis generator plus the shared fusion block.

    Slot 0 is the anchor: it is fused from the raw instruction with a zero
    query bias, so nothing in this module except ``fusion`` touches it.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        H, r, K = cfg.hidden_dim, cfg.rank, cfg.num_slots
        self.K = K
        self.rank = r
        self.step_embedding = nn.Embedding(cfg.max_episode_len, H)
        nn.init.normal_(self.step_embedding.weight, std=0.1)
        self.phi = nn.Sequential(nn.Linear(3 * H, H), nn.Tanh(), nn.Linear(H, H))
        self.W_d = nn.Parameter(torch.randn(H, r) / math.sqrt(H))
        self.W_u = nn.Parameter(torch.randn(r, H) / math.sqrt(r))
        self.W_b = nn.Parameter(torch.randn(H, r) / math.sqrt(H))
        self.W_pi = nn.Parameter(torch.randn(H, K) / math.sqrt(H))
        self.W_align = nn.Parameter(torch.randn(H, H) / math.sqrt(H))
        self.align_attention = Attention(H, out_proj=False)
        # rows 1..K-1; the anchor bias is a fixed zero row
        self.query_bias_shifted = nn.Parameter(torch.randn(K - 1, H) * 0.5)
        self.theta_gamma = nn.Parameter(torch.zeros(()))
        self.norm = nn.LayerNorm(H)
        self.fusion = FusionBlock(H)
        self.register_buffer("shift_norm_sum", torch.zeros((), dtype=torch.float64))
        self.register_buffer("shift_norm_count", torch.zeros((), dtype=torch.float64))

    # -- parameters ---------------------------------------------------------
    @property
    def gamma(self) -> Tensor:
        return torch.sigmoid(self.theta_gamma)

    @property
    def query_bias(self) -> Tensor:
        zero = self.W_pi.new_zeros(1, self.W_pi.shape[0])
        return torch.cat([zero, self.query_bias_shifted], 0)

    # -- pieces -------------------------------------------------------------
    def state_summary(self, ctx: DecisionContext) -> Tensor:
        t_bar = masked_pool(ctx.instruction)
        e_bar = masked_pool(ctx.evidence)
        step = self.step_embedding.weight[ctx.step].expand_as(t_bar)
        return self.phi(torch.cat([t_bar, e_bar, step], -1))

    def shift_gates(self, s: Tensor) -> Tensor:
        return torch.sigmoid(s @ self.W_b)

    def build_shift_basis(self, s: Tensor) -> Tensor:
        """``[..., H, H]`` basis applied to row tokens as ``x @ B``."""
        if not bool(torch.isfinite(s).all()):
            raise ValueError("state summary is not finite")
        g = self.shift_gates(s)
        return (self.W_d * g.unsqueeze(-2)) @ self.W_u

    def slot_gating(self, s: Tensor) -> Tensor:
        return torch.softmax(s @ self.W_pi, -1)

    def alignment_residual(self, normed: TokenMatrix, evidence: TokenMatrix, k: int | None = None) -> Tensor:
        """Alignment residuals for slot ``k`` (``[..., L, H]``) or for every
        shifted slot at once (``[..., K-1, L, H]``) when ``k`` is None."""
        bias = self.query_bias[1:] if k is None else self.query_bias[k]
        x, ev, ev_mask = normed.values, evidence.values, evidence.mask
        if k is None:
            x = x.unsqueeze(-3)
            ev, ev_mask = ev.unsqueeze(-3), ev_mask.unsqueeze(-2)
            bias = bias.unsqueeze(-2)
        out = self.align_attention(x, ev, ev_mask, bias) @ self.W_align
        return out * _row_mask(normed.mask, out)

    def shifts(self, ctx: DecisionContext, s: Tensor) -> tuple[Tensor, Tensor, TokenMatrix]:
        """Return (shift ``[..., K-1, L, H]``, gating ``[..., K]``, LN(T))."""
        T = ctx.instruction
        normed = T.with_values(self.norm(T.values))
        pi = self.slot_gating(s)
        low = (normed.values @ self.W_d) * self.shift_gates(s).unsqueeze(-2)
        global_shift = low @ self.W_u  # LN(T) B
        pi_k = pi[..., 1:].unsqueeze(-1).unsqueeze(-1)
        delta = pi_k * global_shift.unsqueeze(-3)
        delta = delta + self.gamma * pi_k * self.alignment_residual(normed, ctx.evidence)
        delta = delta * _row_mask(normed.mask, delta)
        return delta, pi, normed

    def generate_hypotheses(self, ctx: DecisionContext, s: Tensor) -> tuple[Tensor, Tensor]:
        """Shifted instruction states ``[..., K, L, H]`` (slot 0 is the raw
        instruction) and the slot gating."""
        T = ctx.instruction
        if self.K == 1:
            return T.values.unsqueeze(-3), self.slot_gating(s)
        delta, pi, normed = self.shifts(ctx, s)
        shifted = normed.values.unsqueeze(-3) + delta
        return torch.cat([T.values.unsqueeze(-3), shifted], -3), pi

    def fuse_context(self, tokens: Tensor, evidence: TokenMatrix, mask: Tensor, query_bias: Tensor | None) -> TokenMatrix:
        """Fuse stacked hypothesis tokens ``[..., K, L, H]``; ``query_bias`` is ``[K, H]``."""
        K = tokens.shape[-3]
        tm = TokenMatrix(tokens, mask.unsqueeze(-2).expand(*mask.shape[:-1], K, mask.shape[-1]))
        bias = None if query_bias is None else query_bias.unsqueeze(-2)
        return self.fusion(tm, evidence, bias)

    def anchor_context(self, ctx: DecisionContext) -> TokenMatrix:
        """Fused anchor context, identical to the no-SDB pathway."""
        return self.fusion(ctx.instruction, ctx.evidence, None)

    # -- orchestration ------------------------------------------------------
    def expand(self, ctx: DecisionContext) -> HypothesisBank:
        s = self.state_summary(ctx)
        tokens, pi = self.generate_hypotheses(ctx, s)
        bank = self.fuse_context(tokens, ctx.evidence, ctx.instruction.mask, self.query_bias)
        return HypothesisBank(bank, pi)

    def noise_expand(self, ctx: DecisionContext, noise_scale: float, rng: np.random.Generator | list[np.random.Generator]) -> HypothesisBank:
        """Replace the structured shifts by Gaussian ones whose row norm equals
        ``noise_scale`` times the running mean HSG shift row norm.

        ``rng`` is one generator per batch element (or a single one when unbatched).
        """
        T = ctx.instruction
        s = self.state_summary(ctx)
        pi = torch.full(s.shape[:-1] + (self.K,), 1.0 / self.K, dtype=s.dtype)
        if self.K == 1:
            anchor = self.anchor_context(ctx)
            return HypothesisBank(TokenMatrix(anchor.values.unsqueeze(-3), anchor.mask.unsqueeze(-2)), pi)
        if self.training:
            with torch.no_grad():
                delta, _, _ = self.shifts(ctx, s)
                self.record_shift_norm(delta, T.mask)
        normed = self.norm(T.values)
        target = self.mean_shift_norm * noise_scale
        gens = rng if isinstance(rng, (list, tuple)) else [rng]
        batch_shape = T.values.shape[:-2]
        shape = (self.K - 1,) + tuple(T.values.shape[-2:])
        draws = np.stack([g.standard_normal(shape) for g in gens]).reshape(batch_shape + shape)
        eps = torch.as_tensor(draws, dtype=T.values.dtype)
        eps = eps / eps.norm(dim=-1, keepdim=True).clamp_min(1e-12) * target
        eps = eps * _row_mask(T.mask, eps)
        shifted = normed.unsqueeze(-3) + eps
        tokens = torch.cat([T.values.unsqueeze(-3), shifted], -3)
        bank = self.fuse_context(tokens, ctx.evidence, T.mask, None)
        return HypothesisBank(bank, pi)

    def record_shift_norm(self, delta: Tensor, mask: Tensor) -> None:
        rows = delta.norm(dim=-1)
        m = mask.unsqueeze(-2).expand(rows.shape).to(rows.dtype)
        self.shift_norm_sum += (rows * m).sum().double()
        self.shift_norm_count += m.sum().double()

    @property
    def mean_shift_norm(self) -> float:
        if float(self.shift_norm_count) == 0:
            return 0.0
        return float(self.shift_norm_sum / self.shift_norm_count)


def _row_mask(mask: Tensor, like: Tensor) -> Tensor:
    m = mask.to(like.dtype).unsqueeze(-1)
    while m.dim() < like.dim():
        m = m.unsqueeze(-3)
    return m
