"""Auxiliary losses that keep hypotheses diverse but coordinated, and the
total training objective."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import Tensor


def softplus_inverse(y: float) -> float:
    return math.log(math.expm1(y))


def agreement_loss(desc: Tensor, w: Tensor, consolidated: Tensor) -> Tensor:
    """``sum_k w_k ||h_k - h_acs||^2``; ``desc`` is ``[..., K, H]``."""
    return (w * ((desc - consolidated.unsqueeze(-2)) ** 2).sum(-1)).sum(-1)


def smoothness_loss(desc: Tensor) -> Tensor:
    """Squared distance between neighbouring slots; zero for a single slot."""
    if desc.shape[-2] < 2:
        return desc.new_zeros(desc.shape[:-2])
    return ((desc[..., 1:, :] - desc[..., :-1, :]) ** 2).sum(-1).sum(-1)


def hypothesis_variance(desc: Tensor) -> Tensor:
    """Mean over hidden dims of the population variance across slots."""
    return desc.var(dim=-2, unbiased=False).mean(-1)


def diversity_floor_loss(desc: Tensor, floor: Tensor) -> Tensor:
    return torch.relu(floor - hypothesis_variance(desc))


def sdb_loss(agr: Tensor, sm: Tensor, div: Tensor, lambdas: tuple[float, float, float]) -> Tensor:
    l_agr, l_sm, l_div = lambdas
    return l_agr * agr + l_sm * sm + l_div * div


def total_loss(duet: Tensor, sdb: Tensor, theta_omega: Tensor) -> Tensor:
    return duet + F.softplus(theta_omega) * sdb


@dataclass
class LossBreakdown:
    duet: float
    agr: float
    sm: float
    div: float
    sdb: float
    omega: float
    m: float
    gamma: float
    rho: float
    total: float

    def row(self, step: int) -> dict:
        return {"step": step, **asdict(self)}


CSV_COLUMNS = ("step", "duet", "agr", "sm", "div", "sdb", "omega", "m", "gamma", "rho", "total")
