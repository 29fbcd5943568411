"""Differentiable graph encoders over a sampled subgraph.

Two backbones: a linear propagate-and-average encoder (no layer weights,
symmetric degree normalization, final representation is the mean over all
layer outputs) and a neighbor-mean + concat + linear + ReLU encoder with
per-layer weight matrices. Degrees are subgraph-local, no self-loops.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .sampler import Subgraph
from .tensor import Parameters, Tensor


class EmbeddingTable:
    """Trainable item embeddings; rows are gathered per subgraph node."""

    def __init__(self, params: Parameters, num_items: int, dim: int,
                 rng: np.random.Generator, name: str = "gnn.embed"):
        bound = 1.0 / np.sqrt(dim)
        self.num_items = num_items
        self.dim = dim
        self.name = name
        self.table = params.add(name, rng.uniform(-bound, bound, size=(num_items, dim)))

    def rows(self, node_ids) -> Tensor:
        return T.gather(self.table, node_ids)


def normalized_adjacency(sub: Subgraph) -> np.ndarray:
    """Dense symmetric-normalized adjacency over local nodes.

    Entry (u, v) is 1/sqrt(deg u * deg v) for each local edge; no self
    loops; rows and columns of isolated nodes are all zero.
    """
    n = sub.num_nodes
    deg = sub.degrees().astype(np.float64)
    a = np.zeros((n, n))
    if sub.edge_src.size:
        coeff = 1.0 / np.sqrt(deg[sub.edge_src] * deg[sub.edge_dst])
        a[sub.edge_src, sub.edge_dst] = coeff
    return a


def _norm_coeffs(sub: Subgraph) -> np.ndarray:
    deg = sub.degrees().astype(np.float64)
    if sub.edge_src.size == 0:
        return np.zeros(0)
    return 1.0 / np.sqrt(deg[sub.edge_src] * deg[sub.edge_dst])


def lightgcn_forward(sub: Subgraph, table: EmbeddingTable, layers: int) -> Tensor:
    """Propagate and average: Y = mean over l of H_l, H_{l+1} = A_hat H_l.

    Propagation runs over the canonically sorted edge list, so the result
    is bit-identical under relabeling of local node order.
    """
    if layers < 1:
        raise ValueError("layers must be >= 1")
    coeff = _norm_coeffs(sub)
    h = table.rows(sub.node_ids)
    acc = h
    for _ in range(layers):
        h = T.edge_aggregate(h, sub.edge_src, sub.edge_dst, coeff, sub.num_nodes)
        acc = T.add(acc, h)
    return T.scale(acc, 1.0 / (layers + 1))


class SageParams:
    """Per-layer weight matrices (2*d_in x d_out) for the concat encoder."""

    def __init__(self, params: Parameters, dims, rng: np.random.Generator,
                 prefix: str = "gnn.sage"):
        # dims: [d_in, d_1, ..., d_L]
        self.weights = []
        for l in range(len(dims) - 1):
            fan_in = 2 * dims[l]
            bound = 1.0 / np.sqrt(fan_in)
            w = params.add(f"{prefix}.w{l}",
                           rng.uniform(-bound, bound, size=(fan_in, dims[l + 1])))
            self.weights.append(w)

    @property
    def layers(self) -> int:
        return len(self.weights)


def sage_forward(sub: Subgraph, table: EmbeddingTable, params: SageParams) -> Tensor:
    """Per layer: neighbor mean, concat with self, linear map, ReLU.

    Isolated nodes aggregate a zero neighbor mean.
    """
    n = sub.num_nodes
    deg = sub.degrees().astype(np.float64)
    if sub.edge_src.size:
        mean_coeff = 1.0 / deg[sub.edge_src]
    else:
        mean_coeff = np.zeros(0)
    h = table.rows(sub.node_ids)
    for w in params.weights:
        if 2 * h.data.shape[1] != w.data.shape[0]:
            raise T.ShapeError(
                f"sage layer: weight {w.data.shape} for features {h.data.shape}")
        nbr_mean = T.edge_aggregate(h, sub.edge_src, sub.edge_dst, mean_coeff, n)
        h = T.relu(T.matmul(T.concat([h, nbr_mean]), w))
    return h


class GnnEncoder:
    """Backbone selector owning the embedding table and any layer weights."""

    def __init__(self, params: Parameters, backbone: str, num_items: int,
                 dim: int, layers: int, rng: np.random.Generator):
        if backbone not in ("lightgcn", "sage"):
            raise ValueError(f"unknown backbone {backbone!r}")
        self.backbone = backbone
        self.layers = layers
        self.table = EmbeddingTable(params, num_items, dim, rng)
        self.sage = (SageParams(params, [dim] * (layers + 1), rng)
                     if backbone == "sage" else None)
        self.out_dim = dim

    def forward(self, sub: Subgraph) -> Tensor:
        if self.backbone == "lightgcn":
            return lightgcn_forward(sub, self.table, self.layers)
        return sage_forward(sub, self.table, self.sage)

    def input_rows(self, sub: Subgraph) -> Tensor:
        """The gathered layer-0 rows (before any propagation)."""
        return self.table.rows(sub.node_ids)
