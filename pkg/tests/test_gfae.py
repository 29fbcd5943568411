import numpy as np
import pytest

from jointrec import tensor as T
from jointrec.encoders import EmbeddingTable, lightgcn_forward
from jointrec.gfae import DecoderSpec, gfae_loss, reconstruction_target
from jointrec.tensor import Parameters, Tensor, finite_difference_gradient

from test_encoders import make_subgraph


def test_perfect_reconstruction_is_zero():
    x = np.random.default_rng(0).normal(size=(4, 3))
    loss = gfae_loss(Tensor(x), Tensor(x.copy()), DecoderSpec())
    assert loss.item() == 0.0


def test_zero_output_gives_mean_square_norm():
    x = np.random.default_rng(1).normal(size=(5, 3))
    loss = gfae_loss(Tensor(x), Tensor(np.zeros_like(x)), DecoderSpec())
    assert loss.item() == pytest.approx(np.sum(x * x) / 5)


def test_elementwise_example():
    x = Tensor([[1.0, 0.0], [0.0, 1.0]])
    z = Tensor([[1.0, 0.0], [0.0, 0.0]])
    assert gfae_loss(x, z, DecoderSpec()).item() == pytest.approx(0.5)


def test_shape_mismatch_rejected():
    with pytest.raises(T.ShapeError):
        gfae_loss(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))), DecoderSpec())


def test_target_is_current_rows_and_gradient_blocked():
    params = Parameters()
    table = EmbeddingTable(params, 4, 3, np.random.default_rng(2))
    sub = make_subgraph([0, 2], [(0, 1, 1.0)])
    target = reconstruction_target(sub, table)
    assert np.array_equal(target.data, table.table.data[[0, 2]])
    assert not target.requires_grad

    z = table.rows(sub.node_ids)
    gfae_loss(target, z, DecoderSpec()).backward()
    # z == target, so the (live) z side sits at the minimum: zero gradient
    assert np.all(params["gnn.embed"].grad == 0.0)


def test_fixed_feature_target_preferred():
    params = Parameters()
    table = EmbeddingTable(params, 4, 2, np.random.default_rng(3))
    sub = make_subgraph([1, 3], [(0, 1, 1.0)])
    feats = np.arange(8, dtype=float).reshape(4, 2)
    target = reconstruction_target(sub, table, features=feats)
    assert np.array_equal(target.data, feats[[1, 3]])


def test_edgeless_subgraph_closed_form():
    # propagation dies on an edgeless subgraph: loss = (L/(L+1))^2 ||H0||^2 / n
    params = Parameters()
    table = EmbeddingTable(params, 3, 4, np.random.default_rng(4))
    sub = make_subgraph([0, 1, 2], [])
    h0 = table.table.data
    for layers in (1, 2, 3):
        z = lightgcn_forward(sub, table, layers)
        loss = gfae_loss(reconstruction_target(sub, table), z, DecoderSpec())
        expect = (layers / (layers + 1)) ** 2 * np.sum(h0 * h0) / 3
        assert loss.item() == pytest.approx(expect, rel=1e-12)


def test_zero_loss_linear_decoder_implies_column_space_containment():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(8, 3))
    m = rng.normal(size=(3, 5))  # full row rank -> col(X) subset of col(Z)
    z = x @ m
    w, *_ = np.linalg.lstsq(z, x, rcond=None)
    assert np.linalg.norm(x - z @ w) ** 2 <= 1e-10
    # projection of X onto col(Z) reproduces X
    q, _ = np.linalg.qr(z)
    resid = np.linalg.norm(x - q @ (q.T @ x))
    assert resid <= 1e-8


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)))


@pytest.mark.parametrize("kind", ["identity", "linear"])
def test_gfae_gradients_match_finite_differences(kind):
    sub = make_subgraph([0, 1, 2], [(0, 1, 1.0), (1, 2, 2.0)])
    for trial in range(5):
        params = Parameters()
        rng = np.random.default_rng(50 + trial)
        table = EmbeddingTable(params, 4, 3, rng)
        dec = (DecoderSpec() if kind == "identity"
               else DecoderSpec.linear(params, 3, 3, rng))
        frozen_target = T.constant(table.table.data[sub.node_ids])

        def builder(q):
            z = lightgcn_forward(sub, table, layers=2)
            return gfae_loss(frozen_target, z, dec)

        params.zero_grads()
        builder(params).backward()
        fd = finite_difference_gradient(builder, params)
        for name in params.names():
            assert rel_err(params[name].grad, fd[name]) <= 1e-4, name
