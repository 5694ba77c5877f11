"""Data model for partially labeled embedding datasets, file IO, and a
synthetic hierarchical Gaussian-mixture generator.

Datasets carry per-instance integer labels where ``UNLABELED`` (-1) marks
instances without supervision; ground-truth labels used only for evaluation
are kept in a separate field so they never leak into training.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .validation import as_float_matrix, as_label_vector, check_finite

__all__ = [
    "UNLABELED",
    "EmbeddingSet",
    "GcdDataset",
    "SplitSpec",
    "generate_synthetic",
    "load_embeddings",
    "load_labels",
    "make_gcd_split",
    "save_embeddings",
    "save_labels",
]

UNLABELED = -1

_MAGIC = b"DCCL"
_BINARY_VERSION = 1
# 9 significant digits round-trip any float32 exactly through decimal text.
_CSV_FLOAT_FMT = "%.9g"


class EmbeddingFormatError(ValueError):
    """Raised when an embedding or label file cannot be parsed."""


@dataclass(frozen=True)
class EmbeddingSet:
    """An immutable count x dim matrix of feature vectors (float32)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise ValueError(f"embedding data must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("embedding set must contain at least one instance and one dimension")
        check_finite(arr, "embedding data")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def count(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class SplitSpec:
    """How to carve class-labeled embeddings into a GCD-style split."""

    labeled_class_fraction: float = 0.5
    labeled_instance_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("labeled_class_fraction", "labeled_instance_fraction"):
            value = getattr(self, name)
            if not (0.0 < value <= 1.0):
                raise ValueError(f"{name} must lie in (0, 1], got {value}")


@dataclass(frozen=True)
class GcdDataset:
    """Embeddings plus a partial labeling.

    ``labels`` holds the training-visible labels with ``UNLABELED`` for the
    unlabeled subset.  ``eval_labels``, when present, holds ground truth for
    every instance and is touched only by evaluation code.
    """

    embeddings: EmbeddingSet
    labels: np.ndarray
    eval_labels: np.ndarray | None = None
    labeled_class_set: frozenset = field(default_factory=frozenset)
    true_num_classes: int | None = None

    def __post_init__(self):
        labels = as_label_vector(self.labels, "labels", self.embeddings.count)
        labels = labels.copy()
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        mask = labels != UNLABELED
        if not mask.any():
            raise ValueError("dataset must contain at least one labeled instance")
        if mask.all():
            raise ValueError("dataset must contain at least one unlabeled instance")
        observed = frozenset(int(v) for v in np.unique(labels[mask]))
        class_set = frozenset(int(v) for v in self.labeled_class_set) or observed
        if not observed <= class_set:
            raise ValueError("labeled instances carry labels outside labeled_class_set")
        object.__setattr__(self, "labeled_class_set", class_set)
        if self.eval_labels is not None:
            ev = as_label_vector(self.eval_labels, "eval_labels", self.embeddings.count)
            ev = ev.copy()
            ev.setflags(write=False)
            object.__setattr__(self, "eval_labels", ev)
            if not class_set <= set(int(v) for v in np.unique(ev)):
                raise ValueError("labeled_class_set is not a subset of the evaluation classes")

    @property
    def count(self) -> int:
        return self.embeddings.count

    @property
    def labeled_mask(self) -> np.ndarray:
        return self.labels != UNLABELED

    @property
    def num_labeled_classes(self) -> int:
        return len(self.labeled_class_set)


def generate_synthetic(
    num_superclasses: int,
    classes_per_super: int,
    instances_per_class: int,
    dim: int,
    intra_class_sigma: float,
    superclass_spread: float,
    seed: int = 0,
) -> tuple[EmbeddingSet, np.ndarray]:
    """Sample a hierarchical Gaussian mixture standing in for image features.

    Superclass means are drawn around the origin with scale
    ``superclass_spread``; class means around their superclass mean with an
    eighth of that scale (classes within a superclass overlap once
    ``intra_class_sigma`` is comparable, which is what makes discovery
    non-trivial); instances around their class mean with
    ``intra_class_sigma``.  Rows are grouped by class (class id =
    superclass * classes_per_super + offset).  Deterministic for a fixed
    seed.
    """
    for name, value in (
        ("num_superclasses", num_superclasses),
        ("classes_per_super", classes_per_super),
        ("instances_per_class", instances_per_class),
        ("dim", dim),
    ):
        if int(value) < 1:
            raise ValueError(f"{name} must be >= 1, got {value}")
    if intra_class_sigma < 0:
        raise ValueError(f"intra_class_sigma must be >= 0, got {intra_class_sigma}")
    if superclass_spread <= 0:
        raise ValueError(f"superclass_spread must be > 0, got {superclass_spread}")

    rng = np.random.default_rng(seed)
    n_classes = num_superclasses * classes_per_super
    super_means = rng.normal(0.0, superclass_spread, size=(num_superclasses, dim))
    class_means = np.repeat(super_means, classes_per_super, axis=0) + rng.normal(
        0.0, superclass_spread / 8.0, size=(n_classes, dim)
    )
    noise = rng.normal(
        0.0, 1.0, size=(n_classes * instances_per_class, dim)
    ) * intra_class_sigma
    data = np.repeat(class_means, instances_per_class, axis=0) + noise
    labels = np.repeat(np.arange(n_classes, dtype=np.int64), instances_per_class)
    return EmbeddingSet(data.astype(np.float32)), labels


def make_gcd_split(
    embeddings: EmbeddingSet, class_labels: np.ndarray, spec: SplitSpec
) -> GcdDataset:
    """Split fully labeled embeddings into labeled ("Old") and unlabeled parts.

    A seeded shuffle picks ceil(labeled_class_fraction * n_classes) classes as
    the labeled ones; within each, ceil(labeled_instance_fraction * size)
    instances keep their label.  Everything else becomes UNLABELED while the
    original labels are preserved as ``eval_labels``.
    """
    class_labels = as_label_vector(class_labels, "class_labels", embeddings.count)
    classes = np.unique(class_labels)
    if classes.size < 2:
        raise ValueError("need at least 2 distinct classes to form a GCD split")

    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(classes.size)
    n_labeled_classes = math.ceil(spec.labeled_class_fraction * classes.size)
    labeled_classes = classes[order[:n_labeled_classes]]

    labels = np.full(embeddings.count, UNLABELED, dtype=np.int64)
    for cls in labeled_classes:
        members = np.flatnonzero(class_labels == cls)
        take = math.ceil(spec.labeled_instance_fraction * members.size)
        chosen = members[rng.permutation(members.size)[:take]]
        labels[chosen] = cls

    n_labeled = int(np.sum(labels != UNLABELED))
    if n_labeled == 0:
        raise ValueError("split produced zero labeled instances")
    if n_labeled == embeddings.count:
        raise ValueError("split produced zero unlabeled instances")

    return GcdDataset(
        embeddings=embeddings,
        labels=labels,
        eval_labels=class_labels.copy(),
        labeled_class_set=frozenset(int(c) for c in labeled_classes),
        true_num_classes=int(classes.size),
    )


def save_embeddings(embeddings: EmbeddingSet, path, fmt: str = "binary") -> None:
    if fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<III", _BINARY_VERSION, embeddings.count, embeddings.dim))
            fh.write(embeddings.data.astype("<f4").tobytes(order="C"))
    elif fmt == "csv":
        with open(path, "w", newline="\n") as fh:
            for row in embeddings.data:
                fh.write(",".join(_CSV_FLOAT_FMT % v for v in row))
                fh.write("\n")
    else:
        raise ValueError(f"unknown embedding format {fmt!r}")


def load_embeddings(path, fmt: str = "binary") -> EmbeddingSet:
    """Load an embedding matrix from the binary or CSV on-disk format."""
    if fmt == "binary":
        return _load_embeddings_binary(path)
    if fmt == "csv":
        return _load_embeddings_csv(path)
    raise ValueError(f"unknown embedding format {fmt!r}")


def _load_embeddings_binary(path) -> EmbeddingSet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != _MAGIC:
        raise EmbeddingFormatError(f"{path}: missing or malformed header magic")
    version, count, dim = struct.unpack("<III", blob[4:16])
    if version != _BINARY_VERSION:
        raise EmbeddingFormatError(f"{path}: unsupported format version {version}")
    if count < 1 or dim < 1:
        raise EmbeddingFormatError(f"{path}: empty embedding set ({count}x{dim})")
    expected = 16 + 4 * count * dim
    if len(blob) != expected:
        raise EmbeddingFormatError(
            f"{path}: payload size mismatch (got {len(blob)} bytes, expected {expected})"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=16).reshape(count, dim)
    if not np.all(np.isfinite(data)):
        raise EmbeddingFormatError(f"{path}: non-finite embedding entry")
    return EmbeddingSet(data)


def _load_embeddings_csv(path) -> EmbeddingSet:
    rows: list[list[float]] = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: expected {width} columns, got {len(parts)}"
                )
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise EmbeddingFormatError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise EmbeddingFormatError(f"{path}: empty embedding set")
    data = np.asarray(rows, dtype=np.float32)
    if not np.all(np.isfinite(data)):
        raise EmbeddingFormatError(f"{path}: non-finite embedding entry")
    return EmbeddingSet(data)


def save_labels(labels: np.ndarray, path) -> None:
    labels = as_label_vector(labels, "labels")
    with open(path, "w", newline="\n") as fh:
        for i, value in enumerate(labels):
            fh.write(f"{i},{int(value)}\n")


def load_labels(path, count: int) -> np.ndarray:
    """Read an ``index,label`` CSV; -1 and missing indices mean unlabeled."""
    labels = np.full(count, UNLABELED, dtype=np.int64)
    seen: set[int] = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise EmbeddingFormatError(f"{path}:{lineno}: expected 'index,label'")
            try:
                idx, value = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise EmbeddingFormatError(f"{path}:{lineno}: {exc}") from exc
            if not 0 <= idx < count:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: index {idx} out of range for {count} instances"
                )
            if idx in seen:
                raise EmbeddingFormatError(f"{path}:{lineno}: duplicate index {idx}")
            seen.add(idx)
            labels[idx] = value
    return labels
