"""Synthetic interaction streams with planted cluster structure.

Items are split into clusters and each user prefers one or two of them.
Interactions inside a preferred cluster get longer staytimes and more
positive actions, so co-interaction concentrates within clusters: the item
graph recovers the clusters and neighborhood information genuinely predicts
the labels. A single-cluster config is the null control with no structure.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .itemgraph import Interaction, InteractionLog
from .ranker import LabelConfig, make_label

ACTION_NAMES = ("like", "comment", "share")


def substream(seed: int, *names) -> np.random.Generator:
    """Named, reproducible RNG stream derived from one root seed."""
    keys = [zlib.crc32(str(n).encode()) for n in names]
    return np.random.default_rng(np.random.SeedSequence([int(seed), *keys]))


@dataclass(frozen=True)
class SynthConfig:
    num_users: int = 2000
    num_items: int = 500
    num_clusters: int = 8
    affinity: float = 0.9
    staytime_median_pref: float = 20.0
    staytime_median_nonpref: float = 4.0
    staytime_sigma: float = 0.5
    pos_action_prob_pref: float = 0.25
    pos_action_prob_nonpref: float = 0.03
    neg_action_prob_pref: float = 0.02
    neg_action_prob_nonpref: float = 0.25
    days: int = 6
    interactions_per_day: int = 4000
    seed: int = 0

    def __post_init__(self):
        for p in (self.affinity, self.pos_action_prob_pref,
                  self.pos_action_prob_nonpref, self.neg_action_prob_pref,
                  self.neg_action_prob_nonpref):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probabilities must lie in [0,1], got {p}")
        if self.staytime_median_pref <= self.staytime_median_nonpref:
            raise ValueError("preferred staytime median must exceed non-preferred")
        if self.num_clusters < 1 or self.num_clusters > self.num_items:
            raise ValueError("need 1 <= clusters <= items")


def item_clusters(cfg: SynthConfig) -> np.ndarray:
    """Contiguous block assignment of items to clusters."""
    return (np.arange(cfg.num_items) * cfg.num_clusters) // cfg.num_items


def user_preferences(cfg: SynthConfig, rng: np.random.Generator) -> list[np.ndarray]:
    prefs = []
    for _ in range(cfg.num_users):
        count = 1 + int(rng.random() < 0.5)
        count = min(count, cfg.num_clusters)
        prefs.append(np.sort(rng.choice(cfg.num_clusters, size=count, replace=False)))
    return prefs


def generate(cfg: SynthConfig):
    """Per-day interaction logs plus the ground-truth item->cluster map."""
    clusters = item_clusters(cfg)
    rng_pref = substream(cfg.seed, "synth", "prefs")
    prefs = user_preferences(cfg, rng_pref)
    items_by_cluster = [np.flatnonzero(clusters == c) for c in range(cfg.num_clusters)]

    days = []
    for day in range(cfg.days):
        rng = substream(cfg.seed, "synth", "day", day)
        records = []
        for _ in range(cfg.interactions_per_day):
            u = int(rng.integers(cfg.num_users))
            preferred_clusters = prefs[u]
            if rng.random() < cfg.affinity:
                c = int(preferred_clusters[rng.integers(len(preferred_clusters))])
                item = int(items_by_cluster[c][rng.integers(len(items_by_cluster[c]))])
            else:
                item = int(rng.integers(cfg.num_items))
            in_pref = clusters[item] in preferred_clusters
            median = (cfg.staytime_median_pref if in_pref
                      else cfg.staytime_median_nonpref)
            stay = float(median * np.exp(cfg.staytime_sigma * rng.normal()))
            p_pos = cfg.pos_action_prob_pref if in_pref else cfg.pos_action_prob_nonpref
            p_neg = cfg.neg_action_prob_pref if in_pref else cfg.neg_action_prob_nonpref
            actions = tuple(a for a in ACTION_NAMES if rng.random() < p_pos)
            neg = int(rng.random() < p_neg)
            records.append(Interaction(u, item, stay, actions, neg))
        days.append(InteractionLog(records))
    return days, clusters


def flatten(days) -> InteractionLog:
    records = []
    for day in days:
        records.extend(day.records)
    return InteractionLog(records)


def choose_tau(records, label_cfg: LabelConfig, target: float = 0.5) -> float:
    """Pick the staytime threshold whose refined-label base rate is closest
    to the target, scanning staytime quantiles."""
    stays = np.array([r.staytime for r in records])
    best_tau, best_gap = None, np.inf
    for q in np.linspace(0.05, 0.95, 37):
        tau = float(np.quantile(stays, q))
        if tau <= 0:
            continue
        cfg = LabelConfig(tau=tau, pos_actions=label_cfg.pos_actions)
        rate = np.mean([make_label(r.staytime, r.pos_actions, r.neg_action, cfg)
                        for r in records])
        gap = abs(rate - target)
        if gap < best_gap:
            best_tau, best_gap = tau, gap
    return best_tau
