"""Test-time evaluation: semi-supervised k-means and Hungarian accuracy.

Labeled instances act as permanent anchors: they are always assigned to
their own class's cluster and seed those clusters' centroids.  Remaining
centroids are seeded k-means++-style (distance-weighted) from unlabeled
points.  All features are expected row-unit-norm; distances are squared
Euclidean (monotone in cosine on the sphere) computed as elementwise
squared differences, and centroids are renormalized after every update.

Accuracy matches predicted clusters to ground-truth classes with a single
maximum-agreement assignment over all evaluated instances; Old/New
accuracies reuse that same matching on the respective subsets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import UNLABELED, GcdDataset
from .validation import as_float_matrix, as_label_vector

__all__ = ["Metrics", "SsKmeansResult", "evaluate", "hungarian_accuracy", "ss_kmeans"]


@dataclass(frozen=True)
class Metrics:
    acc_all: float
    acc_old: float
    acc_new: float
    k_used: int
    matching: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "all": self.acc_all,
            "old": self.acc_old,
            "new": self.acc_new,
            "k": self.k_used,
        }


@dataclass(frozen=True)
class SsKmeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    objective_trace: list[float]
    n_iter: int
    assignment_history: list[np.ndarray] = field(default_factory=list)


def _sq_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _renorm(c: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(c)
    return c / norm if norm > 0.0 else c


def ss_kmeans(
    features,
    labels,
    k: int,
    seed: int = 0,
    max_iter: int = 100,
    record_history: bool = False,
) -> SsKmeansResult:
    """Semi-supervised k-means with labeled instances anchored to their class.

    ``labels`` uses the UNLABELED sentinel; cluster index of labeled class c
    is its position in the sorted labeled-class list.  With zero labeled
    instances this reduces to plain k-means with k-means++ seeding.
    """
    x = as_float_matrix(features, "features")
    y = as_label_vector(labels, "labels", x.shape[0])
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")

    labeled_classes = np.unique(y[y != UNLABELED])
    n_l = labeled_classes.size
    if k < n_l:
        raise ValueError(f"k ({k}) must be >= number of labeled classes ({n_l})")
    if k < 1:
        raise ValueError("k must be >= 1")

    class_to_cluster = {int(c): i for i, c in enumerate(labeled_classes)}
    forced = np.full(x.shape[0], -1, dtype=np.int64)
    for idx in np.flatnonzero(y != UNLABELED):
        forced[idx] = class_to_cluster[int(y[idx])]
    unlabeled = np.flatnonzero(forced < 0)

    centroids = np.zeros((k, x.shape[1]))
    for c, i in class_to_cluster.items():
        centroids[i] = _renorm(x[y == c].mean(axis=0))

    rng = np.random.default_rng(seed)
    n_extra = k - n_l
    if n_extra > 0:
        if unlabeled.size == 0:
            raise ValueError("cannot seed extra clusters without unlabeled instances")
        pool = x[unlabeled]
        for j in range(n_extra):
            if n_l + j == 0:
                pick = int(rng.integers(pool.shape[0]))
            else:
                d2 = _sq_distances(pool, centroids[: n_l + j]).min(axis=1)
                total = d2.sum()
                if total <= 0.0:
                    pick = int(rng.integers(pool.shape[0]))
                else:
                    pick = int(rng.choice(pool.shape[0], p=d2 / total))
            centroids[n_l + j] = pool[pick]

    def assign(cents: np.ndarray) -> np.ndarray:
        out = forced.copy()
        if unlabeled.size:
            d2 = _sq_distances(x[unlabeled], cents)
            out[unlabeled] = d2.argmin(axis=1)
        return out

    def objective(a: np.ndarray, cents: np.ndarray) -> float:
        return float(((x - cents[a]) ** 2).sum())

    assignment = assign(centroids)
    trace = [objective(assignment, centroids)]
    history = [assignment.copy()] if record_history else []
    n_iter = 0
    for _ in range(max_iter):
        n_iter += 1
        new_centroids = centroids.copy()
        empty = []
        for ci in range(k):
            members = np.flatnonzero(assignment == ci)
            if members.size == 0:
                empty.append(ci)
            else:
                new_centroids[ci] = _renorm(x[members].mean(axis=0))
        if empty:
            taken: set[int] = set()
            for ci in empty:
                d2_own = ((x[unlabeled] - new_centroids[assignment[unlabeled]]) ** 2).sum(axis=1)
                for t in taken:
                    d2_own[np.flatnonzero(unlabeled == t)] = -np.inf
                far = int(unlabeled[int(np.argmax(d2_own))])
                new_centroids[ci] = x[far]
                assignment[far] = ci
                taken.add(far)
        centroids = new_centroids
        new_assignment = assign(centroids)
        trace.append(objective(new_assignment, centroids))
        converged = np.array_equal(new_assignment, assignment)
        assignment = new_assignment
        if record_history:
            history.append(assignment.copy())
        if converged:
            break

    return SsKmeansResult(
        labels=assignment,
        centroids=centroids,
        objective_trace=trace,
        n_iter=n_iter,
        assignment_history=history,
    )


def hungarian_accuracy(predicted, truth, old_class_set, k_used: int | None = None) -> Metrics:
    """Clustering accuracy under the optimal injective cluster-to-class map.

    One matching is computed on all instances (maximum agreement via the
    assignment problem on the contingency matrix, rectangular allowed) and
    reused for the Old/New splits.
    """
    pred = as_label_vector(predicted, "predicted")
    true = as_label_vector(truth, "truth", pred.shape[0])
    if pred.size == 0:
        raise ValueError("cannot score empty predictions")

    clusters, pred_idx = np.unique(pred, return_inverse=True)
    classes, true_idx = np.unique(true, return_inverse=True)
    contingency = np.zeros((clusters.size, classes.size), dtype=np.int64)
    np.add.at(contingency, (pred_idx, true_idx), 1)

    rows, cols = linear_sum_assignment(-contingency)
    matching = {int(clusters[r]): int(classes[c]) for r, c in zip(rows, cols)}

    mapped = np.full(pred.shape[0], -(2**62), dtype=np.int64)
    for r, c in zip(rows, cols):
        mapped[pred_idx == r] = classes[c]
    correct = mapped == true

    old_set = {int(v) for v in old_class_set}
    old_mask = np.isin(true, sorted(old_set))
    acc_all = float(correct.mean())
    acc_old = float(correct[old_mask].mean()) if old_mask.any() else float("nan")
    acc_new = float(correct[~old_mask].mean()) if (~old_mask).any() else float("nan")
    return Metrics(
        acc_all=acc_all,
        acc_old=acc_old,
        acc_new=acc_new,
        k_used=int(clusters.size if k_used is None else k_used),
        matching=matching,
    )


def evaluate(
    features,
    dataset: GcdDataset,
    k: int,
    seed: int = 0,
    max_iter: int = 100,
) -> Metrics:
    """Cluster all instances with ss_kmeans, score the unlabeled subset."""
    if dataset.eval_labels is None:
        raise ValueError("evaluation requires ground-truth eval_labels")
    result = ss_kmeans(features, dataset.labels, k=k, seed=seed, max_iter=max_iter)
    unlabeled = ~dataset.labeled_mask
    metrics = hungarian_accuracy(
        result.labels[unlabeled],
        dataset.eval_labels[unlabeled],
        dataset.labeled_class_set,
        k_used=k,
    )
    return metrics
