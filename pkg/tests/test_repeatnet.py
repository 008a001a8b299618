import math

import numpy as np
import pytest
import torch

import oracles
from sidrec.data import Session, expand_prefixes
from sidrec.layers import masked_softmax
from sidrec.repeatnet import (
    GRUEncoder,
    RepeatNet,
    gru_encode,
    normal_loss,
    predict,
    repeat_explore_loss,
    repeatnet_loss,
)

@pytest.fixture(autouse=True)
def float64():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)


def W(linear):
    return linear.weight.detach().numpy()


def make_model(seed=0, V=8, S=4, d=3, use_side=False):
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    item_sides = np.zeros((V, 1), dtype=np.int64)
    item_sides[1:, 0] = rng.integers(1, S, V - 1)
    return RepeatNet(V, S, item_sides, d, d, use_side).double()


def random_batch(rng, B=2, L=5, V=8, S=4):
    inputs = np.zeros((B, L), dtype=np.int64)
    sides = np.zeros((B, L, 1), dtype=np.int64)
    for b in range(B):
        n = int(rng.integers(1, L + 1))
        inputs[b, :n] = rng.integers(1, V, n)
        sides[b, :n, 0] = rng.integers(1, S, n)
    return torch.from_numpy(inputs), torch.from_numpy(sides)


# -- gru ----------------------------------------------------------------------


def test_gru_zero_weights_fixed_point():
    enc = GRUEncoder(2, 3)
    for p in enc.parameters():
        torch.nn.init.zeros_(p)
    out = gru_encode(torch.randn(2, 4, 2), torch.ones(2, 4, dtype=torch.bool), enc)
    assert torch.equal(out, torch.zeros(2, 4, 3))


def test_gru_single_step_depends_only_on_input():
    torch.manual_seed(1)
    enc = GRUEncoder(2, 3)
    x = torch.randn(1, 1, 2)
    out = gru_encode(x, torch.ones(1, 1, dtype=torch.bool), enc)
    expect = oracles.gru(x[0].numpy(), [True], W(enc.W_z), W(enc.W_r), W(enc.W_h))
    np.testing.assert_allclose(out[0].detach().numpy(), expect, atol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_gru_matches_naive_recurrence(seed):
    torch.manual_seed(seed)
    enc = GRUEncoder(2, 3)
    x = torch.randn(1, 4, 2)
    mask = torch.tensor([[True, True, True, False]])
    out = gru_encode(x, mask, enc)
    expect = oracles.gru(x[0].numpy(), mask[0].tolist(), W(enc.W_z), W(enc.W_r), W(enc.W_h))
    np.testing.assert_allclose(out[0].detach().numpy(), expect, rtol=0, atol=1e-10)


def test_gru_rejects_non_finite():
    enc = GRUEncoder(1, 1)
    with pytest.raises(FloatingPointError):
        enc(torch.tensor([[[float("nan")]]]), torch.ones(1, 1, dtype=torch.bool))


# -- gate / decoders ----------------------------------------------------------


def encoded(model, inputs, sides):
    mask = inputs != 0
    hidden = model.encode(inputs, sides, mask)
    last = hidden[torch.arange(len(inputs)), mask.sum(1) - 1]
    return hidden, mask, last


def test_gate_zero_WT_is_half():
    model = make_model()
    torch.nn.init.zeros_(model.W_T.weight)
    out = model(torch.tensor([[1, 2, 3, 0]]))
    assert out.p_repeat.item() == 0.5 and out.p_explore.item() == 0.5


def test_gate_single_step_context_is_h1():
    model = make_model(3)
    inputs = torch.tensor([[4, 0, 0]])
    hidden, mask, last = encoded(model, inputs, None)
    logits = W(model.W_T) @ hidden[0, 0].detach().numpy()
    expect = np.exp(logits) / np.exp(logits).sum()
    p_r, p_e = model.repeat_explore_gate(hidden, mask, last)
    np.testing.assert_allclose([p_r.item(), p_e.item()], expect, atol=1e-14)


@pytest.mark.parametrize("use_side", [False, True])
@pytest.mark.parametrize("seed", range(10))
def test_gate_and_decoders_match_oracles(seed, use_side):
    model = make_model(seed, use_side=use_side)
    rng = np.random.default_rng(seed)
    inputs, sides = random_batch(rng)
    hidden, mask, last = encoded(model, inputs, sides)
    p_r, p_e = model.repeat_explore_gate(hidden, mask, last)
    rep = model.repeat_decoder(hidden, mask, last, inputs)
    exp, alpha = model.explore_decoder(hidden, mask, last, inputs)
    cands = model.candidate_embeddings().detach().numpy()
    for b in range(len(inputs)):
        h = hidden[b].detach().numpy()
        m = mask[b].tolist()
        g = model.gate_attention
        o_r, o_e = oracles.repeat_explore_gate(h, m, W(g.W), W(g.U), W(g.v)[0], W(model.W_T))
        assert abs(p_r[b].item() - o_r) < 1e-10 and abs(p_e[b].item() - o_e) < 1e-10
        a = model.repeat_attention
        o_rep = oracles.repeat_decoder(h, m, inputs[b].tolist(), W(a.W), W(a.U), W(a.v)[0], 8)
        np.testing.assert_allclose(rep[b].detach().numpy(), o_rep, rtol=0, atol=1e-10)
        a = model.explore_attention
        o_exp, o_alpha = oracles.explore_decoder(h, m, inputs[b].tolist(), W(a.W), W(a.U),
                                                 W(a.v)[0], W(model.W_p), cands)
        np.testing.assert_allclose(exp[b].detach().numpy(), o_exp, rtol=0, atol=1e-10)
        np.testing.assert_allclose(alpha[b].detach().numpy(), o_alpha, rtol=0, atol=1e-10)


def test_repeat_decoder_occurrence_sum():
    model = make_model()
    torch.nn.init.zeros_(model.repeat_attention.v.weight)
    inputs = torch.tensor([[1, 2, 1]])
    hidden, mask, last = encoded(model, inputs, None)
    rep = model.repeat_decoder(hidden, mask, last, inputs)[0]
    assert rep[1].item() == pytest.approx(2 / 3, abs=1e-15)
    assert rep[2].item() == pytest.approx(1 / 3, abs=1e-15)
    assert rep[0].item() == 0 and rep[3:].abs().sum().item() == 0


def test_repeat_decoder_single_item():
    model = make_model(5)
    inputs = torch.tensor([[3, 0, 0]])
    hidden, mask, last = encoded(model, inputs, None)
    rep = model.repeat_decoder(hidden, mask, last, inputs)[0]
    assert rep[3].item() == 1.0
    assert rep.sum().item() == 1.0


def test_explore_excludes_prefix_and_uniform_when_scores_equal():
    model = make_model()
    torch.nn.init.zeros_(model.W_p.weight)
    inputs = torch.tensor([[1, 2, 1, 0]])
    out = model(inputs)
    exp = out.explore_probs[0]
    assert exp[0].item() == 0 and exp[1].item() == 0 and exp[2].item() == 0
    np.testing.assert_allclose(exp[3:].detach().numpy(), np.full(5, 1 / 5), atol=1e-15)


def test_masked_softmax_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        logits = rng.normal(size=6)
        mask = rng.random(6) < 0.6
        got = masked_softmax(torch.tensor(logits), torch.tensor(mask)).numpy()
        np.testing.assert_allclose(got, oracles.softmax_masked(logits, mask), rtol=0, atol=1e-12)


# -- predict ------------------------------------------------------------------


def test_predict_degenerate_mixtures(monkeypatch):
    model = make_model(2)
    ex = expand_prefixes(Session([1, 2, 3], [1, 1, 2]), 4)[1]
    out = model(torch.tensor([ex.input]))
    for p_r, ref in ((1.0, out.repeat_probs), (0.0, out.explore_probs)):
        monkeypatch.setattr(model, "repeat_explore_gate",
                            lambda *a, p=p_r: (torch.tensor([p]), torch.tensor([1 - p])))
        got = predict(ex, model)
        np.testing.assert_array_equal(got.probs, ref[0].detach().numpy())


def test_predict_sums_to_one():
    model = make_model(4, use_side=True)
    ex = expand_prefixes(Session([1, 5, 3, 5], [1, 2, 2, 2]), 6)[2]
    pd = predict(ex, model)
    assert abs(pd.probs.sum() - 1) < 1e-5
    assert pd.probs[0] == 0
    assert abs(pd.p_repeat + pd.p_explore - 1) < 1e-6


@pytest.mark.parametrize("use_side", [False, True])
def test_padding_does_not_change_prediction(use_side):
    model = make_model(6, use_side=use_side)
    rng = np.random.default_rng(6)
    inputs, sides = random_batch(rng, B=3, L=4)
    padded = torch.cat([inputs, torch.zeros(3, 3, dtype=torch.long)], dim=1)
    padded_sides = torch.cat([sides, torch.zeros(3, 3, 1, dtype=torch.long)], dim=1)
    a = model(inputs, sides).probs
    b = model(padded, padded_sides).probs
    assert torch.equal(a, b)


def test_side_slice_consistency():
    """A fused model whose side half is inert reproduces the baseline scores."""
    d, V = 3, 8
    base = make_model(7, V=V, d=d)
    fused = make_model(8, V=V, d=d, use_side=True)
    with torch.no_grad():
        fused.item_embeddings.weight.copy_(base.item_embeddings.weight)
        for name in ("W_z", "W_r", "W_h"):
            getattr(fused.item_gru, name).weight.copy_(getattr(base.item_gru, name).weight)
        fused.side_embeddings.weight.zero_()
        for att in ("gate_attention", "repeat_attention", "explore_attention"):
            fb, bb = getattr(fused, att), getattr(base, att)
            for name in ("W", "U"):
                getattr(fb, name).weight.zero_()
                getattr(fb, name).weight[:d, :d] = getattr(bb, name).weight
            fb.v.weight.zero_()
            fb.v.weight[:, :d] = bb.v.weight
        fused.W_T.weight.zero_()
        fused.W_T.weight[:, :d] = base.W_T.weight
        # c_IS = [h_item, h_side, c_item, c_side]; candidates = [emb_item, emb_side]
        fused.W_p.weight.zero_()
        fused.W_p.weight[:d, :d] = base.W_p.weight[:, :d]
        fused.W_p.weight[:d, 2 * d:3 * d] = base.W_p.weight[:, d:]
    inputs, sides = random_batch(np.random.default_rng(7), B=4, L=5, V=V)
    np.testing.assert_allclose(fused(inputs, sides).probs.detach().numpy(),
                               base(inputs).probs.detach().numpy(), rtol=0, atol=1e-14)


# -- losses -------------------------------------------------------------------


def test_normal_loss_hand_value():
    value = normal_loss(torch.tensor([0.5, 0.5]), normaliser=1)
    assert value.item() == pytest.approx(-2 * math.log(0.5), abs=1e-15)
    assert round(value.item(), 4) == 1.3863


def test_repeat_explore_loss_hand_trace():
    # session [A, B, A]: step 2 predicts B (not in [A]), step 3 predicts A (in [A, B])
    model = make_model()
    torch.nn.init.zeros_(model.W_T.weight)
    exs = expand_prefixes(Session([1, 2, 1], [1, 1, 1]), 3)
    inputs = torch.tensor([e.input for e in exs])
    targets = torch.tensor([e.target for e in exs])
    _, terms = repeatnet_loss(model, inputs, None, targets, normaliser=1)
    assert terms["repeat_explore"].item() == pytest.approx(-2 * math.log(0.5), abs=1e-12)
    direct = repeat_explore_loss(torch.tensor([0.5, 0.5]), torch.tensor([0.5, 0.5]),
                                 torch.tensor([False, True]), 1)
    assert round(direct.item(), 4) == 1.3863


def test_total_loss_without_attention_is_sum():
    model = make_model(1, use_side=True)
    inputs, sides = random_batch(np.random.default_rng(1))
    targets = torch.tensor([3, 4])
    total, terms = repeatnet_loss(model, inputs, sides, targets, torch.tensor([[1], [2]]), 0.0)
    assert total.item() == (terms["normal"] + terms["repeat_explore"]).item()
    assert "attention" not in terms


def test_loss_rejects_empty_batch():
    model = make_model()
    with pytest.raises(ValueError):
        repeatnet_loss(model, torch.zeros(0, 3, dtype=torch.long), None, torch.zeros(0, dtype=torch.long))


def test_pad_row_stays_zero_and_gets_no_gradient():
    model = make_model(use_side=True)
    inputs, sides = random_batch(np.random.default_rng(2))
    loss, _ = repeatnet_loss(model, inputs, sides, torch.tensor([1, 2]), torch.tensor([[1], [1]]), 0.5)
    loss.backward()
    assert model.item_embeddings.weight[0].abs().sum() == 0
    assert model.item_embeddings.weight.grad[0].abs().sum() == 0
    assert model.side_embeddings.weight.grad[0].abs().sum() == 0
