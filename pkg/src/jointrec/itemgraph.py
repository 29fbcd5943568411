"""Interaction logs and the weighted item-to-item graph built from them.

Edges are scored with the Swing co-click statistic: every unordered pair of
users that interacted with both items contributes w_u * w_v / (alpha + c),
where w_u = 1/sqrt(|I_u|) damps hyperactive users and c = |I_u cap I_v| damps
user pairs whose click sets overlap too much.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

LOG_COLUMNS = ("user_id", "item_id", "staytime_seconds", "pos_actions", "neg_action")

GRAPH_MAGIC = b"E2EG"
GRAPH_VERSION = 1


class LogFormatError(ValueError):
    """Malformed interaction-log text; carries the offending line number."""

    def __init__(self, message, line_no):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class GraphFormatError(ValueError):
    """Malformed graph file; carries the byte offset where parsing failed."""

    def __init__(self, message, offset):
        super().__init__(f"byte {offset}: {message}")
        self.offset = offset


@dataclass(frozen=True)
class Interaction:
    user_id: int
    item_id: int
    staytime: float
    pos_actions: tuple[str, ...] = ()
    neg_action: int = 0


@dataclass
class InteractionLog:
    """A flat list of interaction records plus derived per-user click sets."""

    records: list[Interaction] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def user_items(self) -> dict[int, np.ndarray]:
        """Deduplicated, sorted item array per user."""
        sets: dict[int, set[int]] = {}
        for r in self.records:
            sets.setdefault(r.user_id, set()).add(r.item_id)
        return {u: np.array(sorted(s), dtype=np.int64) for u, s in sorted(sets.items())}

    def num_items(self) -> int:
        return 1 + max(r.item_id for r in self.records) if self.records else 0


def read_log_tsv(path) -> InteractionLog:
    """Parse the tab-separated interaction format (header row required)."""
    records = []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        if tuple(header.split("\t")) != LOG_COLUMNS:
            expected = "\t".join(LOG_COLUMNS)
            raise LogFormatError(f"expected header {expected!r}", 1)
        for line_no, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise LogFormatError(f"expected 5 columns, got {len(parts)}", line_no)
            try:
                user = int(parts[0])
                item = int(parts[1])
                stay = float(parts[2])
                neg = int(parts[4])
            except ValueError as e:
                raise LogFormatError(str(e), line_no) from None
            if stay < 0:
                raise LogFormatError(f"negative staytime {stay}", line_no)
            if neg not in (0, 1):
                raise LogFormatError(f"neg_action must be 0/1, got {neg}", line_no)
            actions = tuple(a for a in parts[3].split(",") if a)
            records.append(Interaction(user, item, stay, actions, neg))
    return InteractionLog(records)


def write_log_tsv(path, log: InteractionLog):
    with open(path, "w", encoding="utf-8") as f:
        f.write("\t".join(LOG_COLUMNS) + "\n")
        for r in log.records:
            f.write(f"{r.user_id}\t{r.item_id}\t{r.staytime:.6f}\t"
                    f"{','.join(r.pos_actions)}\t{r.neg_action}\n")


@dataclass
class ItemGraph:
    """Symmetric weighted item-to-item adjacency in CSR form.

    Neighbor lists are sorted by item id; weights are strictly positive and
    identical in both directions; there are no self-edges.
    """

    num_items: int
    row_offsets: np.ndarray   # int64, length num_items + 1
    col_indices: np.ndarray   # int64
    weights: np.ndarray       # float64

    def degree(self, u: int) -> int:
        return int(self.row_offsets[u + 1] - self.row_offsets[u])

    def neighbors(self, u: int):
        lo, hi = self.row_offsets[u], self.row_offsets[u + 1]
        return self.col_indices[lo:hi], self.weights[lo:hi]

    def num_edges(self) -> int:
        return int(self.col_indices.size)

    def validate(self):
        if self.row_offsets.shape != (self.num_items + 1,):
            raise ValueError("row_offsets length mismatch")
        if self.row_offsets[0] != 0 or np.any(np.diff(self.row_offsets) < 0):
            raise ValueError("row_offsets not monotone from 0")
        if self.row_offsets[-1] != self.col_indices.size:
            raise ValueError("offsets do not cover col_indices")
        if self.col_indices.size != self.weights.size:
            raise ValueError("weights length mismatch")
        if self.col_indices.size:
            if self.col_indices.min() < 0 or self.col_indices.max() >= self.num_items:
                raise ValueError("neighbor id out of range")
            if np.any(self.weights <= 0):
                raise ValueError("non-positive edge weight")
        for u in range(self.num_items):
            nbrs, _ = self.neighbors(u)
            if np.any(np.diff(nbrs) <= 0):
                raise ValueError(f"neighbor list of {u} not strictly sorted")
            if np.any(nbrs == u):
                raise ValueError(f"self-edge at {u}")


def _user_weights(user_items: dict[int, np.ndarray]) -> dict[int, float]:
    return {u: 1.0 / np.sqrt(len(items)) for u, items in user_items.items()}


def swing_score(i: int, j: int, log: InteractionLog, alpha: float = 1.0) -> float:
    """Swing similarity of one item pair, straight from its definition.

    Sums w_u * w_v / (alpha + |I_u cap I_v|) over unordered pairs {u, v} of
    distinct users that interacted with both i and j. Zero when fewer than
    two common users exist.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if i == j:
        raise ValueError("swing_score needs two distinct items")
    ui = log.user_items()
    wu = _user_weights(ui)
    common = sorted(u for u, items in ui.items()
                    if i in items and j in items)
    score = 0.0
    for a in range(len(common)):
        for b in range(a + 1, len(common)):
            u, v = common[a], common[b]
            overlap = np.intersect1d(ui[u], ui[v], assume_unique=True).size
            score += wu[u] * wu[v] / (alpha + overlap)
    return score


def _pairwise_scores(user_items: dict[int, np.ndarray], alpha: float,
                     num_items: int) -> np.ndarray:
    """Dense symmetric score matrix via one pass over co-occurring user pairs.

    For each unordered user pair with c >= 2 common items, the pair's
    contribution w_u*w_v/(alpha+c) lands on every item pair inside the
    common set, which is exactly the Swing double sum reorganized by user
    pair. Dense accumulation is fine at the item counts this package targets.
    """
    wu = _user_weights(user_items)
    # inverted index: item -> users, to enumerate co-occurring user pairs once
    item_users: dict[int, list[int]] = {}
    for u, items in user_items.items():
        for it in items.tolist():
            item_users.setdefault(it, []).append(u)
    seen: set[tuple[int, int]] = set()
    scores = np.zeros((num_items, num_items))
    for it in sorted(item_users):
        users = item_users[it]
        for a in range(len(users)):
            for b in range(a + 1, len(users)):
                pair = (users[a], users[b]) if users[a] < users[b] else (users[b], users[a])
                if pair in seen:
                    continue
                seen.add(pair)
                u, v = pair
                common = np.intersect1d(user_items[u], user_items[v],
                                        assume_unique=True)
                if common.size < 2:
                    continue
                contrib = wu[u] * wu[v] / (alpha + common.size)
                scores[np.ix_(common, common)] += contrib
    np.fill_diagonal(scores, 0.0)
    return scores


def build_swing_graph(log: InteractionLog, alpha: float = 1.0, top_k: int = 100,
                      num_items: int | None = None) -> ItemGraph:
    """Score all item pairs, keep each item's top_k neighbors, symmetrize.

    An edge survives if either endpoint kept it; surviving edges keep their
    full Swing score on both directions.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if top_k <= 0:
        raise ValueError(f"top_k must be positive, got {top_k}")
    if not log.records:
        raise ValueError("cannot build a graph from an empty log")
    n = log.num_items() if num_items is None else num_items
    scores = _pairwise_scores(log.user_items(), alpha, n)

    kept: set[tuple[int, int]] = set()
    for i in range(n):
        row = scores[i]
        nz = np.flatnonzero(row > 0.0)
        if nz.size == 0:
            continue
        if nz.size > top_k:
            # highest score first, item id as the deterministic tie-break
            order = np.lexsort((nz, -row[nz]))
            nz = nz[order[:top_k]]
        for j in nz.tolist():
            kept.add((min(i, j), max(i, j)))

    adj: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    for i, j in sorted(kept):
        w = scores[i, j]
        adj[i].append((j, w))
        adj[j].append((i, w))

    offsets = np.zeros(n + 1, dtype=np.int64)
    cols, weights = [], []
    for u in range(n):
        row = sorted(adj[u])
        offsets[u + 1] = offsets[u] + len(row)
        cols.extend(j for j, _ in row)
        weights.extend(w for _, w in row)
    graph = ItemGraph(n, offsets, np.array(cols, dtype=np.int64),
                      np.array(weights, dtype=np.float64))
    graph.validate()
    return graph


# ---------------------------------------------------------------------------
# binary persistence: magic, version u32, num_items u64, then the CSR arrays


def save_graph(path, graph: ItemGraph):
    graph.validate()
    with open(path, "wb") as f:
        f.write(GRAPH_MAGIC)
        f.write(struct.pack("<I", GRAPH_VERSION))
        f.write(struct.pack("<Q", graph.num_items))
        f.write(graph.row_offsets.astype("<u8").tobytes())
        f.write(graph.col_indices.astype("<u8").tobytes())
        f.write(graph.weights.astype("<f8").tobytes())


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise GraphFormatError(f"truncated while reading {what}", f.tell() - len(buf))
    return buf


def load_graph(path) -> ItemGraph:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != GRAPH_MAGIC:
            raise GraphFormatError(f"bad magic {magic!r}", 0)
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != GRAPH_VERSION:
            raise GraphFormatError(f"unsupported version {version}", 4)
        (n,) = struct.unpack("<Q", _read_exact(f, 8, "num_items"))
        offsets = np.frombuffer(
            _read_exact(f, 8 * (n + 1), "row_offsets"), dtype="<u8").astype(np.int64)
        nnz = int(offsets[-1]) if offsets.size else 0
        cols = np.frombuffer(
            _read_exact(f, 8 * nnz, "col_indices"), dtype="<u8").astype(np.int64)
        weights = np.frombuffer(
            _read_exact(f, 8 * nnz, "weights"), dtype="<f8").astype(np.float64)
        trailing = f.read(1)
        if trailing:
            raise GraphFormatError("trailing bytes after CSR arrays", f.tell() - 1)
    graph = ItemGraph(int(n), offsets, cols, weights)
    try:
        graph.validate()
    except ValueError as e:
        raise GraphFormatError(f"invalid graph content: {e}", 16) from None
    return graph
