import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from sdb import DecisionContext, ModelConfig, SDBPolicy
from sdb.world import WorldConfig, build_splits

torch.set_num_threads(1)
settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SMALL = ModelConfig(K=3, rank=2, hidden_dim=8, max_instruction_len=6, max_episode_len=6, env_feature_dim=6)


def random_context(model: SDBPolicy, rng: np.random.Generator, batch: int = 4, step: int = 0, dtype=torch.float64):
    """A batched decision context with ragged instruction and candidate masks."""
    cfg = model.cfg
    L, N = cfg.max_instruction_len, int(rng.integers(1, 5))
    tokens = torch.as_tensor(rng.integers(0, cfg.vocab_size, size=(batch, L)))
    lens = rng.integers(1, L + 1, size=batch)
    tmask = torch.as_tensor(np.arange(L)[None, :] < lens[:, None])
    feats = torch.as_tensor(rng.standard_normal((batch, N, cfg.env_feature_dim)), dtype=dtype)
    counts = rng.integers(0, N + 1, size=batch)
    nmask = torch.as_tensor(np.arange(N)[None, :] < counts[:, None])
    hist = torch.as_tensor(rng.standard_normal((batch, cfg.env_feature_dim)), dtype=dtype)
    instr = model.backbone.encode_instruction(tokens, tmask)
    ev = model.backbone.encode_environment(feats * nmask[..., None], hist, nmask)
    return DecisionContext(instr, ev, step)


@pytest.fixture
def small_model():
    torch.manual_seed(0)
    return SDBPolicy(SMALL).double()


@pytest.fixture(scope="session")
def tiny_world():
    return WorldConfig(num_train_graphs=6, num_eval_graphs=3, eval_episodes_per_graph=4)


@pytest.fixture(scope="session")
def tiny_splits(tiny_world):
    return build_splits(tiny_world)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    def record(number: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE[number] = (bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
