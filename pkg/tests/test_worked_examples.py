"""Small hand-evaluated cases for every operation."""

import math

import numpy as np
import pytest
import torch

from sdb import SDBPolicy
from sdb import regularizer as reg
from sdb.backbone import Backbone
from sdb.core import DecisionContext, ModelConfig, TokenMatrix, masked_pool
from sdb.evaluation import TooFewSteps, change_rate, spcr, spcr_summary
from sdb.expansion import HypothesisBank
from sdb.selection import (
    ControllerState,
    ReliabilityScorer,
    compute_acs,
    controller_weights,
    ema_update,
    random_select,
    soft_consolidate,
    stable_select,
)
from sdb.world import STOP, WorldConfig, candidate_actions, graph_from_edges, make_episode

from .conftest import SMALL, random_context

D = torch.float64


def tm(rows, mask=None):
    v = torch.tensor(rows, dtype=D)
    return TokenMatrix(v, torch.ones(v.shape[:-1], dtype=torch.bool) if mask is None else torch.tensor(mask))


def bank(values):
    values = torch.as_tensor(values, dtype=D)
    return HypothesisBank(TokenMatrix(values, torch.ones(values.shape[:-1], dtype=torch.bool)), torch.full((values.shape[0],), 1 / values.shape[0], dtype=D))


# -- pooling -------------------------------------------------------------------

def test_pool_examples():
    assert masked_pool(tm([[4.0, 5.0]])).tolist() == [4.0, 5.0]
    assert masked_pool(tm([[1.0], [3.0]])).tolist() == [2.0]
    assert masked_pool(tm([[1.0], [3.0]], [False, True])).tolist() == [3.0]


def test_pool_is_linear():
    g = torch.Generator().manual_seed(0)
    A, B = torch.randn(5, 3, generator=g, dtype=D), torch.randn(5, 3, generator=g, dtype=D)
    mask = torch.tensor([True, False, True, True, False])
    lhs = masked_pool(TokenMatrix(2.5 * A - 0.7 * B, mask))
    rhs = 2.5 * masked_pool(TokenMatrix(A, mask)) - 0.7 * masked_pool(TokenMatrix(B, mask))
    assert torch.allclose(lhs, rhs, atol=1e-6)


# -- expansion -----------------------------------------------------------------

def test_state_summary_identity_phi(small_model):
    hsg = small_model.hsg
    H = SMALL.hidden_dim
    hsg.phi = torch.nn.Identity()
    with torch.no_grad():
        hsg.step_embedding.weight.zero_()
    ctx = DecisionContext(tm([[1.0] * H]), tm([[2.0] * H]), 0)
    assert hsg.state_summary(ctx).tolist() == [1.0] * H + [2.0] * H + [0.0] * H


def test_state_summary_depends_on_step(small_model):
    ctx = random_context(small_model, np.random.default_rng(0), batch=1)
    s0 = small_model.hsg.state_summary(ctx)
    assert torch.equal(s0, small_model.hsg.state_summary(ctx))
    later = DecisionContext(ctx.instruction, ctx.evidence, 1)
    assert not torch.equal(s0, small_model.hsg.state_summary(later))
    with torch.no_grad():
        small_model.hsg.step_embedding.weight[1] = small_model.hsg.step_embedding.weight[0]
    assert torch.equal(s0, small_model.hsg.state_summary(later))


def test_shift_basis_examples(small_model):
    hsg = small_model.hsg
    s = torch.zeros(SMALL.hidden_dim, dtype=D)
    torch.testing.assert_close(hsg.build_shift_basis(s), 0.5 * hsg.W_d @ hsg.W_u)
    with torch.no_grad():
        hsg.W_u.zero_()
    assert (hsg.build_shift_basis(torch.randn(SMALL.hidden_dim, dtype=D)) == 0).all()


def test_shift_basis_rank_at_h4_r2():
    torch.manual_seed(0)
    model = SDBPolicy(ModelConfig(hidden_dim=4, rank=2, env_feature_dim=3)).double()
    for _ in range(50):
        B = model.hsg.build_shift_basis(torch.randn(4, dtype=D) * 3)
        sv = torch.linalg.svdvals(B)
        assert int((sv > 1e-8 * sv[0]).sum()) <= 2


def test_slot_gating_examples(small_model):
    hsg = small_model.hsg
    s = torch.randn(SMALL.hidden_dim, dtype=D)
    with torch.no_grad():
        hsg.W_pi.zero_()
    torch.testing.assert_close(hsg.slot_gating(s), torch.full((3,), 1 / 3, dtype=D))
    with torch.no_grad():
        hsg.W_pi[0, 0] = math.log(2)
    e0 = torch.zeros(SMALL.hidden_dim, dtype=D)
    e0[0] = 1
    torch.testing.assert_close(hsg.slot_gating(e0), torch.tensor([0.5, 0.25, 0.25], dtype=D))


def test_alignment_residual_examples(small_model):
    hsg = small_model.hsg
    ctx = random_context(small_model, np.random.default_rng(1), batch=1)
    normed = ctx.instruction.with_values(hsg.norm(ctx.instruction.values))
    with torch.no_grad():
        hsg.query_bias_shifted[1] = hsg.query_bias_shifted[0]
    torch.testing.assert_close(hsg.alignment_residual(normed, ctx.evidence, 1), hsg.alignment_residual(normed, ctx.evidence, 2))
    # a single evidence token receives all attention
    ev = tm([[[0.3] * SMALL.hidden_dim]])
    out = hsg.alignment_residual(normed, ev, 1)
    row = hsg.align_attention.v(ev.values[0]) @ hsg.W_align
    valid = ctx.instruction.mask[0]
    torch.testing.assert_close(out[0, valid], row.expand(int(valid.sum()), -1))
    assert (out[0, ~valid] == 0).all()
    # fully masked evidence gives a zero residual
    dead = TokenMatrix(ev.values, torch.zeros(1, 1, dtype=torch.bool))
    assert (hsg.alignment_residual(normed, dead, 1) == 0).all()
    with torch.no_grad():
        hsg.W_align.zero_()
    assert (hsg.alignment_residual(normed, ctx.evidence, 1) == 0).all()


def test_vanishing_shift_terms_leave_layer_norm(small_model):
    hsg = small_model.hsg
    ctx = random_context(small_model, np.random.default_rng(2), batch=2)
    with torch.no_grad():
        hsg.W_u.zero_()
        hsg.theta_gamma.fill_(-800.0)
    tokens, _ = hsg.generate_hypotheses(ctx, hsg.state_summary(ctx))
    ln = hsg.norm(ctx.instruction.values)
    for k in range(1, SMALL.K):
        torch.testing.assert_close(tokens[:, k], ln)


def test_zero_gate_slot_is_layer_norm(small_model):
    hsg = small_model.hsg
    ctx = random_context(small_model, np.random.default_rng(3), batch=1)
    with torch.no_grad():
        hsg.W_pi.zero_()
        hsg.W_pi[:, 2] = -1e4 * hsg.state_summary(ctx)[0]
    tokens, pi = hsg.generate_hypotheses(ctx, hsg.state_summary(ctx))
    assert float(pi[0, 2].detach()) == 0.0
    torch.testing.assert_close(tokens[0, 2], hsg.norm(ctx.instruction.values)[0])


def test_fusion_residual_wiring(small_model):
    fusion = small_model.hsg.fusion
    ctx = random_context(small_model, np.random.default_rng(4), batch=1)
    with torch.no_grad():
        for p in fusion.parameters():
            p.zero_()
    out = fusion(ctx.instruction, ctx.evidence, None)
    torch.testing.assert_close(out.values, ctx.instruction.values)


def test_equal_tokens_and_bias_give_equal_contexts(small_model):
    hsg = small_model.hsg
    ctx = random_context(small_model, np.random.default_rng(5), batch=1)
    toks = ctx.instruction.values.unsqueeze(1).expand(1, 2, -1, -1)
    out = hsg.fuse_context(toks, ctx.evidence, ctx.instruction.mask, torch.zeros(2, SMALL.hidden_dim, dtype=D))
    assert torch.equal(out.values[:, 0], out.values[:, 1])


def test_noise_scale_zero_collapses_to_ln_anchor(small_model):
    hsg = small_model.hsg
    ctx = random_context(small_model, np.random.default_rng(6), batch=2)
    small_model.train()
    hsg.noise_expand(ctx, 1.0, [np.random.default_rng(0), np.random.default_rng(1)])
    b = hsg.noise_expand(ctx, 0.0, [np.random.default_rng(0), np.random.default_rng(1)])
    ln_fused = hsg.fusion(ctx.instruction.with_values(hsg.norm(ctx.instruction.values)), ctx.evidence, None)
    for k in range(1, SMALL.K):
        torch.testing.assert_close(b.contexts.values[:, k], ln_fused.values)


def test_noise_norm_matches_recorded_shift_norm(small_model):
    hsg = small_model.hsg
    rng = np.random.default_rng(7)
    small_model.train()
    for _ in range(5):
        ctx = random_context(small_model, rng, batch=8)
        hsg.noise_expand(ctx, 1.0, [np.random.default_rng(i) for i in range(8)])
    target = hsg.mean_shift_norm
    assert target > 0
    small_model.eval()
    with torch.no_grad():
        for p in hsg.fusion.parameters():
            p.zero_()  # fusion becomes the identity, exposing LN(T) + eps
    norms = []
    for draw in range(20):
        ctx = random_context(small_model, rng, batch=50)
        b = hsg.noise_expand(ctx, 1.0, [np.random.default_rng([draw, i]) for i in range(50)])
        eps = b.contexts.values[:, 1:] - hsg.norm(ctx.instruction.values).unsqueeze(1)
        valid = ctx.instruction.mask.unsqueeze(1).expand(eps.shape[:-1])
        norms.append(eps.norm(dim=-1)[valid])
    assert abs(float(torch.cat(norms).detach().mean()) - target) <= 0.1 * target


# -- selection -----------------------------------------------------------------

def test_uniform_confidence_cue():
    desc = torch.eye(3, dtype=D)[:2] + 0.1
    cues = compute_acs(desc, torch.full((2, 4), 0.25, dtype=D), None)
    assert cues[0, 0] == 1 and cues[0, 2] == 1
    torch.testing.assert_close(cues[:, 1], torch.full((2,), -math.log(4), dtype=D))


def test_scorer_examples():
    scorer = ReliabilityScorer().double()
    with torch.no_grad():
        scorer.net[-1].weight.zero_()
        scorer.net[-1].bias.zero_()
    assert (scorer(torch.randn(3, 3, dtype=D)) == 0).all()
    same = torch.tensor([[1.0, -0.5, 0.2]] * 3, dtype=D)
    s = ReliabilityScorer().double()(same)
    assert s[0] == s[1] == s[2]
    summing = ReliabilityScorer().double()
    summing.net = torch.nn.Sequential(torch.nn.Linear(3, 1, bias=False).double())
    with torch.no_grad():
        summing.net[0].weight.fill_(1.0)
    torch.testing.assert_close(summing(torch.tensor([[1.0, -math.log(4), 1.0]], dtype=D)), torch.tensor([2 - math.log(4)], dtype=D))


def test_weight_examples():
    assert controller_weights(torch.zeros(4, dtype=D)).tolist() == [0.25] * 4
    assert controller_weights(torch.tensor([3.0], dtype=D)).tolist() == [1.0]
    torch.testing.assert_close(controller_weights(torch.tensor([math.log(2), 0.0], dtype=D)), torch.tensor([2 / 3, 1 / 3], dtype=D))
    s = torch.randn(5, dtype=D)
    torch.testing.assert_close(controller_weights(s + 17.0), controller_weights(s), atol=1e-6, rtol=0)


def test_consolidation_examples():
    v = torch.randn(3, 2, 4, dtype=D)
    torch.testing.assert_close(soft_consolidate(bank(v), torch.tensor([0.0, 1.0, 0.0], dtype=D)).values, v[1])
    same = v[:1].expand(3, 2, 4)
    torch.testing.assert_close(soft_consolidate(bank(same), torch.tensor([0.2, 0.3, 0.5], dtype=D)).values, v[0])
    scalar = torch.tensor([[[0.0]], [[2.0]]], dtype=D)
    assert soft_consolidate(bank(scalar), torch.tensor([0.5, 0.5], dtype=D)).values.item() == 1.0
    w = torch.tensor([0.2, 0.3, 0.5], dtype=D)
    b = bank(v)
    torch.testing.assert_close(masked_pool(soft_consolidate(b, w)), (w[:, None] * masked_pool(b.contexts)).sum(0), atol=1e-6, rtol=0)


def test_stable_select_examples():
    b = bank(torch.randn(2, 1, 3, dtype=D))
    state = ControllerState()
    w1 = torch.tensor([1.0, 0.0], dtype=D)
    stable_select(state, w1, b, 0.5, 0)
    assert torch.equal(state.ema_weights, w1)
    k, _, _ = stable_select(state, torch.tensor([0.0, 1.0], dtype=D), b, 0.5, 1)
    assert state.ema_weights.tolist() == [0.5, 0.5] and int(k) == 0


def test_ema_contracts_toward_constant_target():
    w = torch.tensor([0.2, 0.7, 0.1], dtype=D)
    ema = torch.tensor([1.0, 0.0, 0.0], dtype=D)
    rho = 0.3
    gap = (ema - w).norm()
    for _ in range(20):
        ema = ema_update(ema, w, rho)
        new_gap = (ema - w).norm()
        assert math.isclose(float(new_gap), (1 - rho) * float(gap), rel_tol=1e-9)
        gap = new_gap


def test_random_select_examples():
    k, _ = random_select(bank(torch.randn(1, 2, 3, dtype=D)), np.random.default_rng(0))
    assert int(k) == 0
    b4 = bank(torch.randn(4, 1, 2, dtype=D))
    rng = np.random.default_rng(123)
    counts = np.bincount([int(random_select(b4, rng)[0]) for _ in range(10_000)], minlength=4) / 10_000
    assert ((counts >= 0.225) & (counts <= 0.275)).all()


def test_all_cues_dropped_selects_anchor():
    scorer = ReliabilityScorer(dropped="ACS").double()
    w = controller_weights(scorer(torch.randn(3, 3, dtype=D)))
    assert torch.equal(w, torch.full((3,), w[0].item(), dtype=D))
    k, _, _ = stable_select(ControllerState(), w, bank(torch.randn(3, 1, 2, dtype=D)), 0.5, 0)
    assert int(k) == 0


# -- regularizer ---------------------------------------------------------------

def test_regularizer_examples():
    d2 = torch.tensor([[0.0], [2.0]], dtype=D)
    assert float(reg.agreement_loss(d2, torch.tensor([0.5, 0.5], dtype=D), torch.tensor([1.0], dtype=D))) == 1.0
    assert float(reg.agreement_loss(d2, torch.tensor([0.0, 1.0], dtype=D), d2[1])) == 0.0
    assert float(reg.smoothness_loss(torch.tensor([[0.0], [1.0], [3.0]], dtype=D))) == 5.0
    assert float(reg.hypothesis_variance(d2)) == 1.0
    assert float(reg.diversity_floor_loss(d2, torch.tensor(0.1, dtype=D))) == 0.0
    assert float(reg.diversity_floor_loss(d2, torch.tensor(1.0, dtype=D))) == 0.0
    one = torch.tensor(1.0, dtype=D)
    assert float(reg.sdb_loss(one, 5 * one, 0 * one, (1.0, 1.0, 1.0))) == 6.0
    assert float(reg.sdb_loss(one, 5 * one, one, (0.0, 0.0, 0.0))) == 0.0
    theta = torch.tensor(reg.softplus_inverse(0.5), dtype=D)
    assert math.isclose(float(reg.total_loss(2 * one, 3 * one, theta)), 3.5, rel_tol=1e-12)
    assert float(reg.total_loss(2 * one, 3 * one, torch.tensor(-1e4, dtype=D))) == 2.0


def test_permutation_behaviour():
    g = torch.Generator().manual_seed(1)
    desc = torch.randn(4, 3, generator=g, dtype=D)
    w = torch.softmax(torch.randn(4, generator=g, dtype=D), -1)
    h = (w[:, None] * desc).sum(0)
    perm = torch.tensor([2, 0, 3, 1])
    m = torch.tensor(0.9, dtype=D)
    torch.testing.assert_close(reg.agreement_loss(desc[perm], w[perm], h), reg.agreement_loss(desc, w, h))
    torch.testing.assert_close(reg.diversity_floor_loss(desc[perm], m), reg.diversity_floor_loss(desc, m))
    assert float(reg.smoothness_loss(desc[perm])) != pytest.approx(float(reg.smoothness_loss(desc)))


def test_hinge_gradient():
    desc = torch.tensor([[0.0], [2.0]], dtype=D)
    theta = torch.tensor(reg.softplus_inverse(0.1), dtype=D, requires_grad=True)
    reg.diversity_floor_loss(desc, torch.nn.functional.softplus(theta)).backward()
    assert float(theta.grad) == 0.0
    d = desc.clone().requires_grad_(True)
    reg.diversity_floor_loss(d, torch.tensor(5.0, dtype=D)).backward()
    # d(div)/d(Var) = -1 and dVar/dx = 2(x - mean)/(K H)
    torch.testing.assert_close(d.grad, torch.tensor([[1.0], [-1.0]], dtype=D))


# -- world and head --------------------------------------------------------------

def test_path_graph_forces_endpoints():
    g = graph_from_edges([(0, 1), (1, 2)], WorldConfig(min_hops=2), seed=0)
    assert {g.start, g.goal} == {0, 2}
    ep = make_episode(g, WorldConfig(), np.random.default_rng(0))
    assert len(ep.instruction) == 3
    assert candidate_actions(g, 0) == [1, STOP]
    one_hop = graph_from_edges([(0, 1), (1, 2)], WorldConfig(min_hops=1), seed=1).with_endpoints(0, 1)
    assert len(make_episode(one_hop, WorldConfig(), np.random.default_rng(0)).instruction) == 2


def test_head_examples():
    torch.manual_seed(0)
    bb = Backbone(ModelConfig(hidden_dim=4, rank=2, env_feature_dim=2)).double()
    ctx = tm([[1.0, 0.0, 0.0, 0.0]])
    with torch.no_grad():
        bb.head_projection.weight.copy_(torch.eye(4, dtype=D))
    ev = tm([[math.log(9), 0, 0, 0], [0.0, 0, 0, 0]])
    torch.testing.assert_close(bb.action_distribution(ctx, ev), torch.tensor([0.9, 0.1], dtype=D))
    twins = tm([[0.5, 1, 0, 0], [0.5, 1, 0, 0], [0.0, 0, 1, 0]])
    p = bb.action_distribution(ctx, twins)
    assert p[0] == p[1]
    perm = torch.tensor([2, 0, 1])
    p3 = bb.action_distribution(ctx, tm(twins.values[perm].tolist()))
    torch.testing.assert_close(p3, p[perm])


def test_stop_row_ignores_neighbours():
    torch.manual_seed(0)
    bb = Backbone(ModelConfig(hidden_dim=4, rank=2, env_feature_dim=2)).double()
    a = bb.encode_environment(torch.randn(3, 2, dtype=D), torch.zeros(2, dtype=D))
    b = bb.encode_environment(torch.randn(3, 2, dtype=D), torch.zeros(2, dtype=D))
    assert a.values.shape[0] == 4 and a.mask.all()
    assert torch.equal(a.values[-1], b.values[-1])


def test_instruction_is_position_sensitive():
    torch.manual_seed(0)
    bb = Backbone(ModelConfig(hidden_dim=8, rank=2, env_feature_dim=2)).double()
    x = bb.encode_instruction(torch.tensor([1, 2, 3]))
    y = bb.encode_instruction(torch.tensor([3, 2, 1]))
    assert not torch.allclose(x.values, y.values.flip(0))
    assert bb.encode_instruction(torch.tensor([5])).mask.sum() == 1


# -- planning change rate --------------------------------------------------------

def test_spcr_examples():
    assert change_rate("goto lm1 alt stop", "goto lm1 alt stop") == 0.0
    assert change_rate("go left", "go right") == 0.5
    assert change_rate("", "") == 0.0
    assert spcr(["a b", "a c", "a c"]) == [0.5, 0.0]
    with pytest.raises(TooFewSteps):
        spcr(["only"])
    summary = spcr_summary([["a", "b", "b"], ["a", "a"]], first_n=1)
    assert summary["per_step"] == [0.5, 0.0] and summary["mean"] == 0.5
