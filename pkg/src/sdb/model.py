"""The navigation policy: backbone encoders and head around the SDB operator.

``SDBPolicy.decide`` runs one decision step for a batch of episodes and
returns everything the trainer and the evaluator need.  With ``K = 0`` the
hypothesis machinery is bypassed and the head reads the fused anchor context
directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from . import regularizer as reg
from .backbone import Backbone
from .core import DecisionContext, ModelConfig, TokenMatrix, masked_pool
from .expansion import HeadShiftingGenerator, HypothesisBank
from .selection import (
    ControllerState,
    ReliabilityScorer,
    compute_acs,
    controller_weights,
    descriptors,
    random_select,
    soft_consolidate,
    stable_select,
)

DEM_MODES = ("HSG", "Noise")
SSM_MODES = ("Stable", "Rand")


@dataclass
class StepOutput:
    logits: Tensor  # [B, N] scores of the pathway fed to the head
    log_probs: Tensor  # [B, N]
    bank: HypothesisBank | None = None
    weights: Tensor | None = None  # w_t [B, K]
    ema_weights: Tensor | None = None
    slot: Tensor | None = None  # k* [B]
    agr: Tensor | None = None  # per-episode regularizer terms [B]
    sm: Tensor | None = None
    div: Tensor | None = None


class SDBPolicy(nn.Module):
    def __init__(self, cfg: ModelConfig, dem_mode: str = "HSG", ssm_mode: str = "Stable"):
        super().__init__()
        if dem_mode not in DEM_MODES or ssm_mode not in SSM_MODES:
            raise ValueError(f"unknown mode {dem_mode}/{ssm_mode}")
        self.cfg = cfg
        self.dem_mode = dem_mode
        self.ssm_mode = ssm_mode
        self.backbone = Backbone(cfg)
        self.hsg = HeadShiftingGenerator(cfg)
        self.scorer = ReliabilityScorer(dropped=cfg.dropped_cues)
        self.theta_rho = nn.Parameter(torch.zeros(()))
        self.theta_m = nn.Parameter(torch.tensor(reg.softplus_inverse(0.1)))
        self.theta_omega = nn.Parameter(torch.tensor(reg.softplus_inverse(0.1)))

    # learnable scalars in their constrained domains
    @property
    def rho(self) -> Tensor:
        return torch.sigmoid(self.theta_rho)

    @property
    def gamma(self) -> Tensor:
        return self.hsg.gamma

    @property
    def floor(self) -> Tensor:
        return F.softplus(self.theta_m)

    @property
    def omega(self) -> Tensor:
        return F.softplus(self.theta_omega)

    def parameter_groups(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        groups: dict[str, list] = {
            "encoders": [], "head": [], "hsg": [], "fusion": [], "scorer": [],
            "theta_gamma": [], "theta_rho": [], "theta_m": [], "theta_omega": [],
        }
        for name, p in self.named_parameters():
            if name.startswith("backbone.head_projection") or name == "backbone.stop_embedding":
                groups["head"].append((name, p))
            elif name.startswith("backbone."):
                groups["encoders"].append((name, p))
            elif name.startswith("hsg.fusion."):
                groups["fusion"].append((name, p))
            elif name == "hsg.theta_gamma":
                groups["theta_gamma"].append((name, p))
            elif name.startswith("hsg."):
                groups["hsg"].append((name, p))
            elif name.startswith("scorer."):
                groups["scorer"].append((name, p))
            else:
                groups[name].append((name, p))
        return groups

    def _log_probs(self, logits: Tensor, mask: Tensor) -> Tensor:
        z = logits.masked_fill(~mask, torch.finfo(logits.dtype).min)
        return torch.log_softmax(z, -1)

    def expand(self, ctx: DecisionContext, rngs=None) -> HypothesisBank:
        if self.dem_mode == "Noise":
            return self.hsg.noise_expand(ctx, self.cfg.noise_scale, rngs)
        return self.hsg.expand(ctx)

    def decide(
        self,
        ctx: DecisionContext,
        state: ControllerState | None,
        training: bool,
        rngs: list[np.random.Generator] | None = None,
    ) -> StepOutput:
        """One decision step for a batch (leading axis) of episodes.

        Training always feeds the soft consolidated context to the head.
        Execution commits to one hypothesis: the EMA argmax, or a uniform draw
        when the selection mode is ``Rand``.
        """
        ev = ctx.evidence
        if not self.cfg.uses_sdb:
            logits = self.backbone.logits(self.hsg.anchor_context(ctx), ev)
            return StepOutput(logits, self._log_probs(logits, ev.mask))

        bank = self.expand(ctx, rngs)
        desc = descriptors(bank)
        dists = self.backbone.action_distribution(bank.contexts, ev)
        cues = compute_acs(desc, dists, None if state is None else state.prev_descriptor)
        w = controller_weights(self.scorer(cues))
        out = StepOutput(logits=None, log_probs=None, bank=bank, weights=w)  # type: ignore[arg-type]

        if training:
            consolidated = soft_consolidate(bank, w)
            h_acs = masked_pool(consolidated)
            out.agr = reg.agreement_loss(desc, w, h_acs)
            out.sm = reg.smoothness_loss(desc)
            out.div = reg.diversity_floor_loss(desc, self.floor)
            if state is not None:
                state.prev_descriptor = h_acs.detach()
                state.step = ctx.step
            context = consolidated
        else:
            if self.ssm_mode == "Rand":
                k, context = random_select(bank, rngs)
                if state is not None:
                    state.prev_descriptor = masked_pool(context, check=False).detach()
                    state.step = ctx.step
            else:
                if state is None:
                    state = ControllerState()
                k, context, state = stable_select(state, w, bank, self.rho.detach(), ctx.step)
                out.ema_weights = state.ema_weights
            out.slot = k
        out.logits = self.backbone.logits(context, ev)
        out.log_probs = self._log_probs(out.logits, ev.mask)
        return out

    def baseline_logits(self, ctx: DecisionContext) -> Tensor:
        """Head applied to the fused anchor context with every SDB piece skipped."""
        return self.backbone.logits(self.hsg.anchor_context(ctx), ctx.evidence)
