"""The ranking side: shared bottom tower, base-reward and stay-time towers,
two-level fusion wiring, label construction and the BCE / pairwise losses.

Score flow: gate over [input features, graph features] -> shared tower ->
upper fusion over {shared, task-projected, graph} tokens -> two towers ->
final score beta_r * reward + beta_s * stay.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .fusion import AttnParams, GateParams, SourceProjection, attn_fuse, gate_fuse
from .itemgraph import Interaction
from .tensor import Parameters, Tensor


@dataclass(frozen=True)
class LabelConfig:
    tau: float = 8.0
    pos_actions: tuple[str, ...] = ("like", "comment", "share")
    clip_lo: float = 0.0
    clip_hi: float = 1.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")


def make_stay_label(staytime: float, cfg: LabelConfig) -> int:
    return 1 if staytime > cfg.tau else 0


def make_label(staytime: float, pos_actions, neg_action: int,
               cfg: LabelConfig) -> int:
    """clip(threshold(staytime) + #positive actions - neg flag, 0, 1)."""
    y0 = make_stay_label(staytime, cfg)
    interact = sum(1 for a in pos_actions if a in cfg.pos_actions) - int(neg_action)
    return int(np.clip(y0 + interact, cfg.clip_lo, cfg.clip_hi))


def labels_for(records: list[Interaction], cfg: LabelConfig):
    """(refined label y, staytime-only label y0) column vectors."""
    y = np.array([[make_label(r.staytime, r.pos_actions, r.neg_action, cfg)]
                  for r in records], dtype=np.float64)
    y0 = np.array([[make_stay_label(r.staytime, cfg)] for r in records],
                  dtype=np.float64)
    return y, y0


@dataclass(frozen=True)
class ScoreWeights:
    beta_reward: float = 0.5
    beta_stay: float = 0.5

    def __post_init__(self):
        if self.beta_reward < 0 or self.beta_stay < 0:
            raise ValueError("score weights must be nonnegative")
        if self.beta_reward + self.beta_stay <= 0:
            raise ValueError("score weights must not both be zero")


class Tower:
    """MLP with ReLU between layers; the final layer is linear."""

    def __init__(self, params: Parameters, widths, rng: np.random.Generator,
                 prefix: str):
        # widths: [d_in, h_1, ..., d_out]
        self.layers = []
        for l in range(len(widths) - 1):
            bound = 1.0 / np.sqrt(widths[l])
            w = params.add(f"{prefix}.w{l}",
                           rng.uniform(-bound, bound, size=(widths[l], widths[l + 1])))
            b = params.add(f"{prefix}.b{l}", np.zeros(widths[l + 1]))
            self.layers.append((w, b))

    def forward(self, x: Tensor) -> Tensor:
        h = x
        for l, (w, b) in enumerate(self.layers):
            h = T.add(T.matmul(h, w), b)
            if l < len(self.layers) - 1:
                h = T.relu(h)
        return h


@dataclass
class RankOutputs:
    final: Tensor
    reward: Tensor
    stay: Tensor
    fused_upper: Tensor | None = None


class RankModel:
    """Two-tower ranker with gated bottom fusion and configurable upper fusion.

    fusion: "attn" or "gate" picks the upper-level operator; levels
    "bottom-only" drops the upper injection entirely so the task towers see
    the shared tower output alone.
    """

    def __init__(self, params: Parameters, in_dim: int, gnn_dim: int,
                 rng: np.random.Generator, fusion: str = "attn",
                 levels: str = "both", shared_widths=(32, 16),
                 task_hidden: int = 16, attn_heads: int = 2,
                 score_weights: ScoreWeights = ScoreWeights()):
        if fusion not in ("attn", "gate"):
            raise ValueError(f"unknown fusion kind {fusion!r}")
        if levels not in ("both", "bottom-only"):
            raise ValueError(f"unknown fusion levels {levels!r}")
        self.fusion = fusion
        self.levels = levels
        self.score_weights = score_weights
        d_cat = in_dim + gnn_dim
        d_shared = shared_widths[-1]
        self.bottom_gate = GateParams(params, d_cat, rng, "rank.gate0")
        self.shared_tower = Tower(params, [d_cat, *shared_widths], rng, "rank.shared")

        if levels == "both":
            d_tok = gnn_dim
            self.ltr_proj = SourceProjection(params, in_dim, d_tok, "rank.ltr")
            self.shared_proj = SourceProjection(params, d_shared, d_tok, "rank.shared_tok")
            if fusion == "attn":
                self.attn = AttnParams(params, d_tok, attn_heads, rng, "rank.attn")
                task_in = d_tok
            else:
                self.upper_gate = GateParams(params, 3 * d_tok, rng, "rank.gate1")
                task_in = 3 * d_tok
        else:
            task_in = d_shared
        self.reward_tower = Tower(params, [task_in, task_hidden, 1], rng, "rank.reward")
        self.stay_tower = Tower(params, [task_in, task_hidden, 1], rng, "rank.stay")

    def forward(self, f_in: Tensor, f_gnn: Tensor) -> RankOutputs:
        f_cat = T.concat([f_in, f_gnn])
        f_shared = self.shared_tower.forward(gate_fuse(f_cat, self.bottom_gate))

        if self.levels == "both":
            tokens = [self.shared_proj.apply(f_shared),
                      self.ltr_proj.apply(f_in),
                      f_gnn]
            if self.fusion == "attn":
                fused = attn_fuse(T.stack_tokens(tokens), self.attn)
            else:
                fused = gate_fuse(T.concat(tokens), self.upper_gate)
        else:
            fused = f_shared

        reward = self.reward_tower.forward(fused)
        stay = self.stay_tower.forward(fused)
        final = T.add(T.scale(reward, self.score_weights.beta_reward),
                      T.scale(stay, self.score_weights.beta_stay))
        return RankOutputs(final, reward, stay, fused)


def ltr_loss(out: RankOutputs, y: np.ndarray, y0: np.ndarray) -> Tensor:
    """Sum of the two tower losses: mean BCE of sigmoid(logit) per tower.

    The reward tower is supervised by the refined label, the stay tower by
    the staytime-only label.
    """
    reward_bce = T.bce_mean(T.sigmoid(out.reward), y)
    stay_bce = T.bce_mean(T.sigmoid(out.stay), y0)
    return T.scalar_combine([reward_bce, stay_bce], [1.0, 1.0])


def bpr_loss(z: Tensor, w: Tensor, pairs) -> Tensor:
    """Pairwise ranking loss: sum over pairs of ln(1 + exp(-w^T(z_i - z_j))).

    Used by the analytical verification harness; per-row gradients are
    scalar multiples of w by construction.
    """
    if w.data.ndim != 2 or w.data.shape[1] != 1:
        raise T.ShapeError(f"bpr: scorer must be a column vector, got {w.data.shape}")
    pairs = np.asarray(pairs, dtype=np.int64)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise T.ShapeError(f"bpr: pairs must be (m, 2), got {pairs.shape}")
    zi = T.gather(z, pairs[:, 0])
    zj = T.gather(z, pairs[:, 1])
    margin = T.matmul(T.sub(zi, zj), w)
    return T.sum_all(T.softplus(T.scale(margin, -1.0)))
