"""Multi-hop subgraph sampling with temperature-controlled neighbor draws.

A neighbor v of u is drawn with probability w_uv^beta / sum_k w_uk^beta;
beta = 0 is uniform, larger beta concentrates on heavy edges. Draws are
without replacement (sequential renormalization) and nodes are deduplicated
globally across hops: the first arrival wins and settled nodes are neither
re-added nor expanded again.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .itemgraph import ItemGraph


class EmptyNeighborhoodError(ValueError):
    """Raised when a distribution is requested for an isolated node."""


@dataclass(frozen=True)
class SamplerConfig:
    hops: int = 1
    fanouts: tuple[int, ...] = (100,)
    beta: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "fanouts", tuple(int(f) for f in self.fanouts))
        if self.hops < 1:
            raise ValueError("hops must be >= 1")
        if len(self.fanouts) != self.hops:
            raise ValueError(
                f"need one fanout per hop, got {len(self.fanouts)} for {self.hops}")
        if any(f < 1 for f in self.fanouts):
            raise ValueError("fanouts must be positive")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")


@dataclass
class Subgraph:
    """A sampled neighborhood batch in local index space.

    node_ids holds global item ids, sources first in their given order.
    Edges are symmetric (every sampled parent->child relation plus its
    reverse) and canonically sorted by global (src, dst), so downstream
    aggregation is independent of local labeling.
    """

    node_ids: np.ndarray
    num_sources: int
    edge_src: np.ndarray      # local indices
    edge_dst: np.ndarray
    edge_weight: np.ndarray
    features: np.ndarray | None = None
    _local: dict[int, int] = field(default_factory=dict, repr=False)

    @property
    def num_nodes(self) -> int:
        return int(self.node_ids.size)

    def local_index(self, item_id: int) -> int:
        if not self._local:
            self._local.update({int(g): i for i, g in enumerate(self.node_ids)})
        return self._local[int(item_id)]

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edge_src, minlength=self.num_nodes)


def neighbor_probs(u: int, graph: ItemGraph, beta: float):
    """Sampling distribution over N(u): weights raised to beta, normalized."""
    nbrs, weights = graph.neighbors(u)
    if nbrs.size == 0:
        raise EmptyNeighborhoodError(f"item {u} has no neighbors")
    p = weights.astype(np.float64) ** beta
    p /= p.sum()
    return nbrs, p


class SubgraphSampler:
    """Reusable sampler over one graph + config; caches per-node distributions."""

    def __init__(self, graph: ItemGraph, config: SamplerConfig):
        self.graph = graph
        self.config = config
        self._cum_cache: dict[int, np.ndarray] = {}

    def _cumprobs(self, u: int) -> np.ndarray:
        cum = self._cum_cache.get(u)
        if cum is None:
            _, p = neighbor_probs(u, self.graph, self.config.beta)
            cum = np.cumsum(p)
            self._cum_cache[u] = cum
        return cum

    def sample_neighbors(self, u: int, fanout: int, rng: np.random.Generator):
        """Draw min(fanout, deg(u)) distinct neighbors of u.

        When fanout < deg(u), draws are sequential with renormalization,
        so the first draw follows neighbor_probs exactly.
        """
        nbrs, _ = self.graph.neighbors(u)
        deg = nbrs.size
        if deg == 0:
            return nbrs
        if fanout >= deg:
            return nbrs
        cum = self._cumprobs(u)
        if fanout == 1:
            idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
            return nbrs[min(idx, deg - 1):][:1]
        p = np.diff(cum, prepend=0.0)
        picked = np.empty(fanout, dtype=np.int64)
        total = 1.0
        for k in range(fanout):
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(p), r, side="right"))
            idx = min(idx, deg - 1)  # guard fp edge at r == total
            while p[idx] == 0.0:     # ensure a live candidate
                idx -= 1
            picked[k] = nbrs[idx]
            total -= p[idx]
            p[idx] = 0.0
        return picked

    def sample(self, sources, rng: np.random.Generator) -> Subgraph:
        """Expand sources hop by hop into a deduplicated local subgraph."""
        graph, cfg = self.graph, self.config
        src_list = []
        seen: set[int] = set()
        for s in sources:
            s = int(s)
            if s < 0 or s >= graph.num_items:
                raise ValueError(f"source item {s} not in graph of {graph.num_items}")
            if s not in seen:
                seen.add(s)
                src_list.append(s)
        if not src_list:
            raise ValueError("sources must be nonempty")

        nodes = list(src_list)
        frontier = list(src_list)
        edges: dict[tuple[int, int], float] = {}
        for hop in range(cfg.hops):
            fanout = cfg.fanouts[hop]
            next_frontier = []
            for u in frontier:
                for v in self.sample_neighbors(u, fanout, rng).tolist():
                    if (u, v) not in edges:
                        nbrs, ws = graph.neighbors(u)
                        w = float(ws[np.searchsorted(nbrs, v)])
                        edges[(u, v)] = w
                        edges[(v, u)] = w
                    if v not in seen:
                        seen.add(v)
                        nodes.append(v)
                        next_frontier.append(v)
            frontier = next_frontier
            if not frontier:
                break

        node_ids = np.array(nodes, dtype=np.int64)
        local = {g: i for i, g in enumerate(nodes)}
        keys = sorted(edges)
        edge_src = np.array([local[a] for a, _ in keys], dtype=np.int64)
        edge_dst = np.array([local[b] for _, b in keys], dtype=np.int64)
        edge_w = np.array([edges[k] for k in keys], dtype=np.float64)
        return Subgraph(node_ids, len(src_list), edge_src, edge_dst, edge_w,
                        _local=local)


def sample_subgraph(sources, graph: ItemGraph, config: SamplerConfig,
                    rng: np.random.Generator, features: np.ndarray | None = None
                    ) -> Subgraph:
    """One-shot sampling; optionally attaches fixed feature rows per node."""
    sub = SubgraphSampler(graph, config).sample(sources, rng)
    if features is not None:
        sub.features = features[sub.node_ids]
    return sub
