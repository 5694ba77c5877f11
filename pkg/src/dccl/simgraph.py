"""Consolidated similarity network over instance features.

Pairwise similarity is cosine similarity mapped to [0, 1].  Label
consolidation forces an edge between every same-class labeled pair (weighted
by the endpoints' maximal neighborhood similarity rather than 1, which
prevents the labeled set from collapsing into one artificial cluster) and
forbids edges between cross-class labeled pairs.  Unlabeled-involved pairs
keep their raw similarity when it clears the confidence threshold and the
pair is among either endpoint's nearest neighbors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import UNLABELED
from .validation import as_float_matrix, as_label_vector

__all__ = [
    "GraphConfig",
    "SimilarityGraph",
    "build_consolidated_graph",
    "cosine_similarity",
    "max_neighbor_similarity",
    "normalize_rows",
    "save_edgelist",
]


@dataclass(frozen=True)
class GraphConfig:
    tau_f: float = 0.7
    knn_k: int = 50

    def __post_init__(self):
        if not 0.0 <= self.tau_f <= 1.0:
            raise ValueError(f"tau_f must lie in [0, 1], got {self.tau_f}")
        if self.knn_k < 1:
            raise ValueError(f"knn_k must be >= 1, got {self.knn_k}")


class SimilarityGraph:
    """Undirected weighted graph; each edge stored once with i < j."""

    def __init__(self, num_nodes: int, rows, cols, weights):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        weights = np.asarray(weights, dtype=np.float64)
        if not (rows.shape == cols.shape == weights.shape):
            raise ValueError("edge arrays must have matching shapes")
        if num_nodes < 1:
            raise ValueError("graph needs at least one node")
        if rows.size:
            if rows.min() < 0 or max(rows.max(), cols.max()) >= num_nodes:
                raise ValueError("edge endpoint out of range")
            if np.any(rows >= cols):
                raise ValueError("edges must be stored with i < j (no self-loops)")
            if np.any((weights < 0.0) | (weights > 1.0)):
                raise ValueError("edge weights must lie in [0, 1]")
        order = np.lexsort((cols, rows))
        self.num_nodes = int(num_nodes)
        self.rows = rows[order]
        self.cols = cols[order]
        self.weights = weights[order]
        if self.rows.size:
            packed = self.rows * num_nodes + self.cols
            if np.any(np.diff(packed) == 0):
                raise ValueError("duplicate edge")
        for arr in (self.rows, self.cols, self.weights):
            arr.setflags(write=False)

    @property
    def num_edges(self) -> int:
        return int(self.rows.size)

    def total_weight(self) -> float:
        return float(self.weights.sum())

    def strengths(self) -> np.ndarray:
        s = np.zeros(self.num_nodes)
        np.add.at(s, self.rows, self.weights)
        np.add.at(s, self.cols, self.weights)
        return s

    def adjacency(self) -> list[list[tuple[int, float]]]:
        """Neighbor lists [(j, w), ...] per node, ascending neighbor id."""
        adj: list[list[tuple[int, float]]] = [[] for _ in range(self.num_nodes)]
        for i, j, w in zip(self.rows, self.cols, self.weights):
            adj[int(i)].append((int(j), float(w)))
            adj[int(j)].append((int(i), float(w)))
        for lst in adj:
            lst.sort()
        return adj

    def edge_set(self) -> set[tuple[int, int]]:
        return set(zip(self.rows.tolist(), self.cols.tolist()))


def normalize_rows(features) -> np.ndarray:
    """L2-normalize rows; a zero row is an error."""
    feats = as_float_matrix(features, "features")
    norms = np.linalg.norm(feats, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise ValueError(f"feature row {bad} is the zero vector")
    return feats / norms[:, None]


def cosine_similarity(v_i, v_j) -> float:
    """Cosine similarity rescaled to [0, 1]: (cos + 1) / 2."""
    a = np.asarray(v_i, dtype=np.float64).ravel()
    b = np.asarray(v_j, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for the zero vector")
    s = (float(np.dot(a / na, b / nb)) + 1.0) / 2.0
    return min(max(s, 0.0), 1.0)


def _similarity_matrix(features) -> np.ndarray:
    feats = normalize_rows(features)
    sim = (feats @ feats.T + 1.0) / 2.0
    np.clip(sim, 0.0, 1.0, out=sim)
    return sim


def max_neighbor_similarity(i: int, features) -> float:
    """Largest similarity between node i and any other node (self excluded)."""
    feats = as_float_matrix(features, "features")
    if feats.shape[0] < 2:
        raise ValueError("max neighbor similarity needs at least 2 instances")
    sim = _similarity_matrix(feats)
    row = sim[i].copy()
    row[i] = -np.inf
    return float(row.max())


def build_consolidated_graph(
    features, labels: np.ndarray | None, cfg: GraphConfig
) -> SimilarityGraph:
    """Build the label-consolidated similarity graph over all instances.

    ``labels`` uses the UNLABELED sentinel; pass None to treat every instance
    as unlabeled (consolidation off).  Same-class labeled pairs are always
    connected with weight max(s_i^max, s_j^max); cross-class labeled pairs are
    never connected; remaining pairs require similarity > tau_f and membership
    in either endpoint's knn_k exact nearest neighbors.
    """
    feats = as_float_matrix(features, "features")
    n = feats.shape[0]
    if labels is None:
        labels = np.full(n, UNLABELED, dtype=np.int64)
    else:
        labels = as_label_vector(labels, "labels", n)

    sim = _similarity_matrix(feats)
    np.fill_diagonal(sim, -np.inf)
    s_max = sim.max(axis=1) if n > 1 else np.zeros(n)

    k = min(cfg.knn_k, n - 1)
    candidate = np.zeros((n, n), dtype=bool)
    if k > 0:
        nn_idx = np.argpartition(-sim, kth=k - 1, axis=1)[:, :k]
        np.put_along_axis(candidate, nn_idx, True, axis=1)
        candidate |= candidate.T

    is_labeled = labels != UNLABELED
    both_labeled = np.outer(is_labeled, is_labeled)
    same_class = labels[:, None] == labels[None, :]
    case_a = both_labeled & same_class
    case_b = ~both_labeled & candidate & (sim > cfg.tau_f)
    np.fill_diagonal(case_a, False)

    smax_pair = np.maximum(s_max[:, None], s_max[None, :])
    weights = np.where(case_a, smax_pair, np.where(case_b, sim, 0.0))

    iu, ju = np.triu_indices(n, k=1)
    keep = (case_a | case_b)[iu, ju]
    return SimilarityGraph(n, iu[keep], ju[keep], weights[iu[keep], ju[keep]])


def save_edgelist(graph: SimilarityGraph, path) -> None:
    """Dump edges as ``i j w`` lines, weights with 9 significant digits."""
    with open(path, "w", newline="\n") as fh:
        for i, j, w in zip(graph.rows, graph.cols, graph.weights):
            fh.write(f"{i} {j} {w:.9g}\n")
