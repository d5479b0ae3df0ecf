"""Shared value types, configuration and masked pooling.

Token matrices carry an optional leading batch dimension: ``values`` is
``[..., N, H]`` and ``mask`` is ``[..., N]`` with ``True`` marking a valid row.
Every function here treats the leading dimensions as independent samples.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import torch
from torch import Tensor


class SDBError(Exception):
    """Base class for all errors raised by this package."""


class AllMasked(SDBError):
    pass


class ZeroVector(SDBError, ArithmeticError):
    pass


class StaleState(SDBError):
    pass


class ConfigError(SDBError, ValueError):
    pass


@dataclass(frozen=True)
class TokenMatrix:
    values: Tensor
    mask: Tensor

    def __post_init__(self):
        if self.values.shape[:-1] != self.mask.shape:
            raise ValueError(
                f"mask shape {tuple(self.mask.shape)} does not match values {tuple(self.values.shape)}"
            )

    @property
    def hidden_dim(self) -> int:
        return self.values.shape[-1]

    def with_values(self, values: Tensor) -> "TokenMatrix":
        return TokenMatrix(values, self.mask)


@dataclass(frozen=True)
class DecisionContext:
    instruction: TokenMatrix
    evidence: TokenMatrix
    step: int

    def __post_init__(self):
        if self.step < 0:
            raise ValueError("step must be non-negative")
        if self.instruction.hidden_dim != self.evidence.hidden_dim:
            raise ValueError("instruction and evidence hidden dims differ")


def masked_pool(tokens: TokenMatrix, check: bool = True) -> Tensor:
    """Mean of the valid rows. Returns ``[..., H]``."""
    m = tokens.mask.to(tokens.values.dtype)
    count = m.sum(-1, keepdim=True)
    if check and bool((count == 0).any()):
        raise AllMasked("masked_pool received a token matrix with no valid rows")
    total = (tokens.values * m.unsqueeze(-1)).sum(-2)
    return total / count.clamp_min(1.0)


def masked_softmax(logits: Tensor, mask: Tensor) -> Tensor:
    """Softmax over the last axis restricted to ``mask``; masked entries get 0."""
    neg = torch.finfo(logits.dtype).min
    z = logits.masked_fill(~mask, neg)
    p = torch.softmax(z, dim=-1)
    return p * mask.to(p.dtype)


@dataclass
class ModelConfig:
    """Model hyper-parameters. ``K = 0`` selects the no-SDB baseline."""

    K: int = 3
    rank: int = 8
    hidden_dim: int = 32
    max_instruction_len: int = 12
    max_episode_len: int = 15
    success_threshold: float = 0.0
    lambda_agr: float = 0.1
    lambda_sm: float = 0.01
    lambda_div: float = 0.01
    seed: int = 0
    env_feature_dim: int = 16
    vocab_size: int = 72
    noise_scale: float = 1.0
    dropped_cues: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.K < 0:
            raise ConfigError("K must be >= 0 (0 = baseline)")
        if self.rank < 1 or self.rank > self.hidden_dim:
            raise ConfigError("rank must satisfy 1 <= rank <= hidden_dim")
        for name in ("lambda_agr", "lambda_sm", "lambda_div"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.max_instruction_len < 1 or self.max_episode_len < 1:
            raise ConfigError("lengths must be positive")
        if self.noise_scale < 0:
            raise ConfigError("noise_scale must be non-negative")
        if set(self.dropped_cues) - set("ACS"):
            raise ConfigError("dropped_cues may only contain the letters A, C, S")

    @property
    def num_slots(self) -> int:
        return max(self.K, 1)

    @property
    def uses_sdb(self) -> bool:
        return self.K >= 1


# key -> (unit, description); used when writing config files
CONFIG_DOCS: dict[str, tuple[str, str]] = {
    "K": ("count", "hypotheses including the anchor; 0 = no-SDB baseline"),
    "rank": ("count", "low-rank shift subspace width r"),
    "hidden_dim": ("count", "token hidden width H"),
    "max_instruction_len": ("tokens", "instruction cap L"),
    "max_episode_len": ("steps", "episode horizon T"),
    "success_threshold": ("edge-length units", "success radius delta"),
    "lambda_agr": ("1", "agreement loss weight"),
    "lambda_sm": ("1", "slot smoothness loss weight"),
    "lambda_div": ("1", "diversity floor loss weight"),
    "seed": ("1", "parameter init / experiment seed"),
    "env_feature_dim": ("count", "node feature width"),
    "vocab_size": ("tokens", "landmark + distractor vocabulary"),
    "noise_scale": ("1", "noise expansion magnitude relative to the HSG shift norm"),
    "dropped_cues": ("letters", "reliability cues zeroed before scoring, subset of ACS"),
    # training keys
    "iterations": ("updates", "gradient updates"),
    "batch_size": ("episodes", "episodes per update"),
    "learning_rate": ("1", "step size"),
    "optimizer": ("name", "sgd or adam"),
    "dagger_mix": ("probability", "initial chance of following the student"),
    "dagger_mix_final": ("probability", "student chance after linear annealing"),
    "eval_every": ("updates", "held-out evaluation period; 0 disables"),
    "dem_mode": ("name", "HSG or Noise"),
    "ssm_mode": ("name", "Stable or Rand"),
    "dtype": ("name", "float32 or float64"),
    "num_train_graphs": ("graphs", "training set size"),
    "num_eval_graphs": ("graphs", "held-out set size"),
    "min_nodes": ("nodes", "smallest graph"),
    "max_nodes": ("nodes", "largest graph"),
    "min_hops": ("hops", "minimum start-goal distance"),
    "distractor_rate": ("probability", "distractor insertion rate per instruction token"),
    "random_edge_lengths": ("bool", "draw edge lengths from (0.5, 1.5]"),
    "log_path": ("path", "training CSV path; empty disables"),
}


def _coerce(raw: str, target: Any) -> Any:
    if isinstance(target, bool):
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if isinstance(target, int):
        return int(raw)
    if isinstance(target, float):
        return float(raw)
    if isinstance(target, (list, tuple)):
        return [int(x) for x in raw.replace(",", " ").split()]
    return raw


def dump_config(cfg: Any, path: str | Path) -> None:
    """Write a flat ``key = value`` config file with one documented line per key."""
    lines = [f"# {type(cfg).__name__}"]
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        unit, doc = CONFIG_DOCS.get(f.name, ("", ""))
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()  # type: ignore[misc]
        lines.append(f"# {doc} [{unit}] (default {default})")
        lines.append(f"{f.name} = {value}")
    Path(path).write_text("\n".join(lines) + "\n")


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def apply_overrides(cfg: Any, overrides: dict[str, str]) -> Any:
    """Return a copy of the dataclass ``cfg`` with string overrides coerced to field types."""
    names = {f.name for f in dataclasses.fields(cfg)}
    kwargs = {}
    for key, raw in overrides.items():
        if key not in names:
            continue
        try:
            kwargs[key] = _coerce(raw, getattr(cfg, key))
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from exc
    return dataclasses.replace(cfg, **kwargs)


def load_config(cls: type, path: str | Path) -> Any:
    overrides = parse_config_text(Path(path).read_text())
    unknown = set(overrides) - {f.name for f in dataclasses.fields(cls)}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return apply_overrides(cls(), overrides)
