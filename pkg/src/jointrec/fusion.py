"""Feature fusion operators for the ranking model.

Gated concatenation applies a learned elementwise sigmoid gate to the
concatenated feature block. Attention token fusion treats each feature
source as a token, runs multi-head self-attention across the tokens with a
residual connection, and averages over the token axis.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Parameters, Tensor


class GateParams:
    """Square gate map over the concatenated dimension plus a bias."""

    def __init__(self, params: Parameters, d_cat: int, rng: np.random.Generator,
                 prefix: str):
        bound = 1.0 / np.sqrt(d_cat)
        self.w = params.add(f"{prefix}.W",
                            rng.uniform(-bound, bound, size=(d_cat, d_cat)))
        self.b = params.add(f"{prefix}.b", np.zeros(d_cat))


def gate_fuse(f_cat: Tensor, gate: GateParams) -> Tensor:
    """sigmoid(F_cat W + b) applied elementwise to F_cat."""
    if f_cat.data.shape[1] != gate.w.data.shape[0]:
        raise T.ShapeError(
            f"gate_fuse: features {f_cat.data.shape} vs gate {gate.w.data.shape}")
    g = T.sigmoid(T.add(T.matmul(f_cat, gate.w), gate.b))
    return T.mul(g, f_cat)


class AttnParams:
    """Multi-head self-attention across feature tokens.

    The output projection starts at zero so fusion begins as a plain token
    mean (the residual path) and attention is learned from there.
    """

    def __init__(self, params: Parameters, dim: int, heads: int,
                 rng: np.random.Generator, prefix: str):
        if dim % heads != 0:
            raise T.ShapeError(f"attention dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        bound = 1.0 / np.sqrt(dim)
        self.wq, self.wk, self.wv = [], [], []
        for h in range(heads):
            size = (dim, self.head_dim)
            self.wq.append(params.add(f"{prefix}.q{h}", rng.uniform(-bound, bound, size)))
            self.wk.append(params.add(f"{prefix}.k{h}", rng.uniform(-bound, bound, size)))
            self.wv.append(params.add(f"{prefix}.v{h}", rng.uniform(-bound, bound, size)))
        self.wo = params.add(f"{prefix}.o", np.zeros((dim, dim)))


def attn_fuse(f_stack: Tensor, attn: AttnParams) -> Tensor:
    """Mean over tokens of (MHSA(F_stack) + F_stack) for a (N, T, d) stack."""
    if f_stack.data.ndim != 3:
        raise T.ShapeError(f"attn_fuse: expected (N,T,d), got {f_stack.data.shape}")
    n, t_count, dim = f_stack.data.shape
    if dim != attn.dim:
        raise T.ShapeError(f"attn_fuse: token dim {dim} vs params dim {attn.dim}")
    tokens = T.unstack_tokens(f_stack)
    inv_sqrt = 1.0 / np.sqrt(attn.head_dim)

    fused_tokens = []
    per_token_heads = [[] for _ in range(t_count)]
    for h in range(attn.heads):
        q = [T.matmul(tok, attn.wq[h]) for tok in tokens]
        k = [T.matmul(tok, attn.wk[h]) for tok in tokens]
        v = [T.matmul(tok, attn.wv[h]) for tok in tokens]
        for ti in range(t_count):
            score_cols = [T.scale(T.rowsum(T.mul(q[ti], k[si])), inv_sqrt)
                          for si in range(t_count)]
            alpha = T.row_softmax(T.concat(score_cols))
            attended = None
            for si in range(t_count):
                part = T.scale_rows(v[si], T.slice_cols(alpha, si, si + 1))
                attended = part if attended is None else T.add(attended, part)
            per_token_heads[ti].append(attended)
    for ti in range(t_count):
        heads_cat = (per_token_heads[ti][0] if attn.heads == 1
                     else T.concat(per_token_heads[ti]))
        mhsa = T.matmul(heads_cat, attn.wo)
        fused_tokens.append(T.add(mhsa, tokens[ti]))
    return T.mean(T.stack_tokens(fused_tokens), axis=1)


class SourceProjection:
    """Learnable per-source linear map to the shared token dimension.

    Initialized to the (truncated) identity so same-width sources pass
    through unchanged before training.
    """

    def __init__(self, params: Parameters, d_in: int, d_out: int, prefix: str):
        init = np.zeros((d_in, d_out))
        for i in range(min(d_in, d_out)):
            init[i, i] = 1.0
        self.w = params.add(f"{prefix}.proj", init)

    def apply(self, f: Tensor) -> Tensor:
        return T.matmul(f, self.w)


def project_to_common(f: Tensor, proj: SourceProjection) -> Tensor:
    return proj.apply(f)
