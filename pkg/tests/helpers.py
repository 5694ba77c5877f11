"""Shared test oracles: finite differences, set partitions, brute-force matching."""

from __future__ import annotations

import itertools

import numpy as np


def central_difference(f, x, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x (perturbs in place)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_x = x.ravel()
    flat_g = grad.ravel()
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + h
        f_plus = f(x)
        flat_x[i] = orig - h
        f_minus = f(x)
        flat_x[i] = orig
        flat_g[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_grad_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute deviation relative to the gradient's magnitude."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale


def set_partitions(n: int):
    """All partitions of range(n) as restricted-growth label tuples."""

    def rec(i, labels, k):
        if i == n:
            yield tuple(labels)
            return
        for lab in range(k + 1):
            labels.append(lab)
            yield from rec(i + 1, labels, max(k, lab + 1))
            labels.pop()

    yield from rec(0, [], 0)


def brute_force_matching_accuracy(predicted: np.ndarray, truth: np.ndarray) -> float:
    """Max accuracy over all injective cluster-to-class maps (small k only)."""
    clusters = np.unique(predicted)
    classes = np.unique(truth)
    total = predicted.shape[0]
    transposed = clusters.size > classes.size
    rows, cols = (classes, clusters) if transposed else (clusters, classes)
    best = 0
    for perm in itertools.permutations(range(cols.size), rows.size):
        agree = 0
        for r, c in zip(range(rows.size), perm):
            if transposed:
                agree += int(np.sum((predicted == cols[c]) & (truth == rows[r])))
            else:
                agree += int(np.sum((predicted == rows[r]) & (truth == cols[c])))
        best = max(best, agree)
    return best / total


def random_similarity_graph(rng: np.random.Generator, max_nodes: int = 8):
    """Random weighted undirected graph with at least one edge."""
    from dccl.simgraph import SimilarityGraph

    n = int(rng.integers(4, max_nodes + 1))
    p_edge = float(rng.uniform(0.3, 0.9))
    rows, cols, weights = [], [], []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p_edge:
                rows.append(i)
                cols.append(j)
                weights.append(float(rng.uniform(0.05, 1.0)))
    if not rows:
        rows, cols, weights = [0], [1], [1.0]
    return SimilarityGraph(n, rows, cols, weights)
