import numpy as np
import pytest

from jointrec import tensor as T
from jointrec.ranker import (
    LabelConfig, RankModel, ScoreWeights, Tower, bpr_loss, labels_for,
    ltr_loss, make_label, make_stay_label,
)
from jointrec.itemgraph import Interaction
from jointrec.tensor import Parameters, Tensor, finite_difference_gradient


CFG = LabelConfig(tau=5.0, pos_actions=("like", "comment", "share"))


def test_staytime_threshold():
    assert make_label(10.0, (), 0, CFG) == 1
    assert make_label(5.0, (), 0, CFG) == 0  # strict threshold
    assert make_stay_label(10.0, CFG) == 1


def test_positive_action_rescues_short_stay():
    assert make_label(2.0, ("like",), 0, CFG) == 1


def test_neg_action_cancels_long_stay():
    assert make_label(10.0, (), 1, CFG) == 0


def test_unknown_actions_ignored():
    assert make_label(2.0, ("view",), 0, CFG) == 0


def test_label_monotonicity():
    rng = np.random.default_rng(0)
    actions = CFG.pos_actions
    for _ in range(200):
        stay = float(rng.uniform(0, 12))
        k = int(rng.integers(0, 3))
        base_actions = actions[:k]
        neg = int(rng.integers(0, 2))
        y = make_label(stay, base_actions, neg, CFG)
        if k < len(actions):
            assert make_label(stay, actions[:k + 1], neg, CFG) >= y
        assert make_label(stay, base_actions, 1, CFG) <= make_label(
            stay, base_actions, 0, CFG)


def test_labels_for_returns_both_variants():
    recs = [Interaction(0, 1, 10.0, (), 0), Interaction(0, 2, 2.0, ("like",), 0)]
    y, y0 = labels_for(recs, CFG)
    assert y.tolist() == [[1.0], [1.0]]
    assert y0.tolist() == [[1.0], [0.0]]


def test_label_config_validation():
    with pytest.raises(ValueError):
        LabelConfig(tau=0.0)
    with pytest.raises(ValueError):
        ScoreWeights(0.0, 0.0)


def build_model(fusion="attn", levels="both", seed=0, in_dim=4, gnn_dim=4,
                attn_heads=2):
    params = Parameters()
    model = RankModel(params, in_dim=in_dim, gnn_dim=gnn_dim,
                      rng=np.random.default_rng(seed), fusion=fusion,
                      levels=levels, shared_widths=(6, 4), task_hidden=5,
                      attn_heads=attn_heads)
    return params, model


def random_inputs(seed, n=5, in_dim=4, gnn_dim=4):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, in_dim)), rng.normal(size=(n, gnn_dim))


@pytest.mark.parametrize("fusion,levels", [("attn", "both"), ("gate", "both"),
                                           ("attn", "bottom-only")])
def test_forward_shapes_and_finite(fusion, levels):
    params, model = build_model(fusion, levels)
    f_in, f_gnn = random_inputs(1)
    out = model.forward(Tensor(f_in), Tensor(f_gnn))
    assert out.final.data.shape == (5, 1)
    assert np.all(np.isfinite(out.final.data))
    assert np.all(np.isfinite(out.reward.data))
    assert np.all(np.isfinite(out.stay.data))


def test_reward_only_score_weights():
    params = Parameters()
    model = RankModel(params, 4, 4, np.random.default_rng(0),
                      score_weights=ScoreWeights(1.0, 0.0))
    f_in, f_gnn = random_inputs(2)
    out = model.forward(Tensor(f_in), Tensor(f_gnn))
    assert np.array_equal(out.final.data, out.reward.data)


def test_zero_towers_give_bias_only_constant():
    params, model = build_model()
    for name in params.names():
        if name.startswith(("rank.reward", "rank.stay")):
            params[name].data[:] = 0.0
    params["rank.reward.b1"].data[:] = 3.0
    params["rank.stay.b1"].data[:] = -1.0
    f_in, f_gnn = random_inputs(3)
    out = model.forward(Tensor(f_in), Tensor(f_gnn))
    expect = 0.5 * 3.0 + 0.5 * (-1.0)
    assert np.allclose(out.final.data, expect)


def test_bce_examples():
    assert T.bce_mean(T.sigmoid(Tensor([[0.0]])), np.array([[1.0]])).item() == \
        pytest.approx(np.log(2.0))
    assert T.bce_mean(T.sigmoid(Tensor([[20.0]])), np.array([[1.0]])).item() <= 1e-8
    two = T.bce_mean(T.sigmoid(Tensor([[0.0], [0.0]])),
                     np.array([[0.0], [1.0]])).item()
    assert two == pytest.approx(np.log(2.0))


def test_bce_minimum_at_label():
    for y in (0.0, 1.0):
        exact = T.bce_mean(Tensor([[y]]), np.array([[y]])).item()
        off = T.bce_mean(Tensor([[abs(y - 0.3)]]), np.array([[y]])).item()
        assert exact < off
        assert exact <= 1e-10


def test_ltr_loss_sums_towers():
    params, model = build_model()
    f_in, f_gnn = random_inputs(4)
    out = model.forward(Tensor(f_in), Tensor(f_gnn))
    y = np.ones((5, 1))
    y0 = np.zeros((5, 1))
    total = ltr_loss(out, y, y0).item()
    reward = T.bce_mean(T.sigmoid(out.reward), y).item()
    stay = T.bce_mean(T.sigmoid(out.stay), y0).item()
    assert total == pytest.approx(reward + stay)


def test_bpr_equal_rows_give_log2_per_pair():
    z = Tensor(np.ones((3, 4)))
    w = Tensor(np.ones((4, 1)))
    pairs = [(0, 1), (1, 2)]
    assert bpr_loss(z, w, pairs).item() == pytest.approx(2 * np.log(2.0))


def test_bpr_saturated_pair_is_free():
    z = Tensor(np.array([[20.0], [0.0]]))
    w = Tensor(np.array([[1.0]]))
    assert bpr_loss(z, w, [(0, 1)]).item() <= 1e-8


def test_bpr_gradient_lies_in_span_w():
    rng = np.random.default_rng(5)
    params = Parameters()
    z = params.add("z", rng.normal(size=(6, 4)))
    w = rng.normal(size=(4, 1))
    pairs = [(0, 1), (2, 3), (4, 5), (1, 4)]
    bpr_loss(z, Tensor(w), pairs).backward()
    g = params["z"].grad
    wdir = w[:, 0] / np.linalg.norm(w[:, 0])
    for row in g:
        kernel_part = row - np.dot(row, wdir) * wdir
        assert np.linalg.norm(kernel_part) <= 1e-12


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)))


@pytest.mark.parametrize("fusion,levels", [("attn", "both"), ("gate", "both"),
                                           ("attn", "bottom-only")])
def test_full_model_gradients_match_finite_differences(fusion, levels):
    for trial in range(3):
        params, model = build_model(fusion, levels, seed=60 + trial,
                                    in_dim=3, gnn_dim=3, attn_heads=1)
        if fusion == "attn" and levels == "both":
            model.attn.wo.data[:] = np.random.default_rng(trial).normal(
                size=model.attn.wo.data.shape) * 0.3
        rng = np.random.default_rng(70 + trial)
        f_in = params.add("f_in", rng.normal(size=(4, 3)))
        f_gnn = params.add("f_gnn", rng.normal(size=(4, 3)))
        y = rng.integers(0, 2, size=(4, 1)).astype(float)
        y0 = rng.integers(0, 2, size=(4, 1)).astype(float)

        def builder(q):
            out = model.forward(q["f_in"], q["f_gnn"])
            return ltr_loss(out, y, y0)

        params.zero_grads()
        builder(params).backward()
        fd = finite_difference_gradient(builder, params)
        for name in params.names():
            assert rel_err(params[name].grad, fd[name]) <= 1e-4, name
