"""Dynamic conceptional contrastive learning for generalized category
discovery on embedding data: graph-based conception generation, a momentum
conception memory, dual-level contrastive training of a small encoder, and
semi-supervised clustering evaluation."""

from .data import (
    UNLABELED,
    EmbeddingSet,
    GcdDataset,
    SplitSpec,
    generate_synthetic,
    load_embeddings,
    load_labels,
    make_gcd_split,
    save_embeddings,
    save_labels,
)
from .encoder import EncoderConfig, EncoderParams, augment, cosine_lr, forward
from .estimator import DCCL
from .evaluation import Metrics, evaluate, hungarian_accuracy, ss_kmeans
from .infomap import ConceptionAssignment, cluster, codelength
from .losses import LossConfig, conception_loss, dispersion_loss, instance_loss, total_loss
from .memory import ConceptionMemory
from .simgraph import GraphConfig, SimilarityGraph, build_consolidated_graph, cosine_similarity
from .trainer import TrainConfig, TrainResult, run

__version__ = "0.1.0"

__all__ = [
    "DCCL",
    "ConceptionAssignment",
    "ConceptionMemory",
    "EmbeddingSet",
    "EncoderConfig",
    "EncoderParams",
    "GcdDataset",
    "GraphConfig",
    "LossConfig",
    "Metrics",
    "SimilarityGraph",
    "SplitSpec",
    "TrainConfig",
    "TrainResult",
    "UNLABELED",
    "augment",
    "build_consolidated_graph",
    "cluster",
    "codelength",
    "conception_loss",
    "cosine_lr",
    "cosine_similarity",
    "dispersion_loss",
    "evaluate",
    "forward",
    "generate_synthetic",
    "hungarian_accuracy",
    "instance_loss",
    "load_embeddings",
    "load_labels",
    "make_gcd_split",
    "run",
    "save_embeddings",
    "save_labels",
    "ss_kmeans",
    "total_loss",
]
