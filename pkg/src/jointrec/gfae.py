"""Self-supervised feature reconstruction: squared error between encoder
output and the (gradient-blocked) input node features, averaged per node.

The default decoder is the identity map; a linear decoder with its own
weight matrix is available when encoder and feature dims differ.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .encoders import EmbeddingTable
from .sampler import Subgraph
from .tensor import Parameters, Tensor


class DecoderSpec:
    """identity: requires encoder dim == feature dim. linear: trainable (k x d)."""

    def __init__(self, kind: str = "identity", weight: Tensor | None = None):
        if kind not in ("identity", "linear"):
            raise ValueError(f"unknown decoder kind {kind!r}")
        if kind == "linear" and weight is None:
            raise ValueError("linear decoder needs a weight tensor")
        self.kind = kind
        self.weight = weight

    @classmethod
    def linear(cls, params: Parameters, enc_dim: int, feat_dim: int,
               rng: np.random.Generator, name: str = "gnn.decoder"):
        bound = 1.0 / np.sqrt(enc_dim)
        w = params.add(name, rng.uniform(-bound, bound, size=(enc_dim, feat_dim)))
        return cls("linear", w)

    def apply(self, z: Tensor) -> Tensor:
        if self.kind == "identity":
            return z
        return T.matmul(z, self.weight)


def reconstruction_target(sub: Subgraph, table: EmbeddingTable | None = None,
                          features: np.ndarray | None = None) -> Tensor:
    """The rows the encoder must reproduce, as a constant (no gradient).

    Prefers fixed per-item features when given; otherwise uses the current
    input embedding rows, detached so the target cannot chase the encoder.
    """
    if features is not None:
        return T.constant(features[sub.node_ids])
    if sub.features is not None:
        return T.constant(sub.features)
    if table is None:
        raise ValueError("need either fixed features or an embedding table")
    return T.constant(table.table.data[sub.node_ids])


def gfae_loss(x: Tensor, z: Tensor, dec: DecoderSpec) -> Tensor:
    """||X - dec(Z)||_F^2 averaged over the node count."""
    recon = dec.apply(z)
    if recon.data.shape != x.data.shape:
        raise T.ShapeError(
            f"gfae: target {x.data.shape} vs reconstruction {recon.data.shape}")
    n = x.data.shape[0]
    return T.scale(T.frobenius_sq(T.sub(x, recon)), 1.0 / n)
