"""Scikit-learn style estimator wrapping the full training pipeline.

``DCCL`` follows the semi-supervised convention of ``y`` holding -1 for
unlabeled instances.  ``fit`` trains the encoder, ``labels_`` holds the
semi-supervised k-means clustering of all training instances in the learned
feature space, ``transform`` maps new data to that space, and ``predict``
assigns new data to the fitted cluster centroids.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data import UNLABELED, EmbeddingSet, GcdDataset
from .encoder import EncoderConfig, forward
from .evaluation import ss_kmeans
from .losses import LossConfig
from .simgraph import GraphConfig
from .trainer import TrainConfig, derive_rngs, run

__all__ = ["DCCL"]


class DCCL(ClusterMixin, BaseEstimator):
    """Dynamic conceptional contrastive learning for category discovery.

    Parameters mirror the training configuration; see ``TrainConfig``,
    ``LossConfig`` and ``GraphConfig`` for semantics.  ``n_clusters=None``
    clusters with the final discovered conception count.
    """

    def __init__(
        self,
        n_clusters: int | None = None,
        max_epoch: int = 50,
        tau_i: int = 5,
        n_c: int = 8,
        n_i: int = 16,
        batch_size: int = 128,
        lr_extractor: float = 0.01,
        lr_head: float = 0.1,
        sgd_momentum: float = 0.9,
        eta: float = 0.9,
        augment_strength: float = 0.3,
        tau_f: float = 0.7,
        knn_k: int = 50,
        tau_c: float = 0.05,
        tau_s: float = 0.07,
        tau_l: float = 0.05,
        tau_m: float = 0.3,
        lam: float = 0.35,
        alpha: float = 0.3,
        beta: float = 0.1,
        hidden_dim: int = 64,
        feature_dim: int = 32,
        head_hidden_dim: int = 32,
        projection_dim: int = 128,
        use_instance_loss: bool = True,
        use_conception_loss: bool = True,
        use_dispersion_loss: bool = True,
        use_momentum_update: bool = True,
        use_consolidation: bool = True,
        random_state: int = 0,
    ):
        self.n_clusters = n_clusters
        self.max_epoch = max_epoch
        self.tau_i = tau_i
        self.n_c = n_c
        self.n_i = n_i
        self.batch_size = batch_size
        self.lr_extractor = lr_extractor
        self.lr_head = lr_head
        self.sgd_momentum = sgd_momentum
        self.eta = eta
        self.augment_strength = augment_strength
        self.tau_f = tau_f
        self.knn_k = knn_k
        self.tau_c = tau_c
        self.tau_s = tau_s
        self.tau_l = tau_l
        self.tau_m = tau_m
        self.lam = lam
        self.alpha = alpha
        self.beta = beta
        self.hidden_dim = hidden_dim
        self.feature_dim = feature_dim
        self.head_hidden_dim = head_hidden_dim
        self.projection_dim = projection_dim
        self.use_instance_loss = use_instance_loss
        self.use_conception_loss = use_conception_loss
        self.use_dispersion_loss = use_dispersion_loss
        self.use_momentum_update = use_momentum_update
        self.use_consolidation = use_consolidation
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            max_epoch=self.max_epoch,
            tau_i=self.tau_i,
            n_c=self.n_c,
            n_i=self.n_i,
            instance_batch=self.batch_size,
            lr_extractor=self.lr_extractor,
            lr_head=self.lr_head,
            sgd_momentum=self.sgd_momentum,
            eta=self.eta,
            augment_strength=self.augment_strength,
            seed=self.random_state,
            loss=LossConfig(
                tau_c=self.tau_c,
                tau_s=self.tau_s,
                tau_l=self.tau_l,
                tau_m=self.tau_m,
                lam=self.lam,
                alpha=self.alpha,
                beta=self.beta,
            ),
            graph=GraphConfig(tau_f=self.tau_f, knn_k=self.knn_k),
            encoder=EncoderConfig(
                hidden_dim=self.hidden_dim,
                feature_dim=self.feature_dim,
                head_hidden_dim=self.head_hidden_dim,
                projection_dim=self.projection_dim,
            ),
            use_instance_loss=self.use_instance_loss,
            use_conception_loss=self.use_conception_loss,
            use_dispersion_loss=self.use_dispersion_loss,
            use_momentum_update=self.use_momentum_update,
            use_consolidation=self.use_consolidation,
        )

    def fit(self, X, y):
        """Train on partially labeled data (y == -1 marks unlabeled rows)."""
        X = check_array(X, dtype=np.float64, ensure_min_samples=2)
        y = np.asarray(y, dtype=np.int64)
        if y.shape != (X.shape[0],):
            raise ValueError("y must be a 1-D label vector aligned with X")
        dataset = GcdDataset(embeddings=EmbeddingSet(X), labels=y)

        result = run(dataset, self._train_config())
        self.encoder_params_ = result.params
        self.assignment_ = result.assignment
        self.n_conceptions_ = result.final_num_conceptions
        self.epoch_log_ = result.epoch_logs
        self.n_features_in_ = X.shape[1]

        feats = forward(self.encoder_params_, X.astype(np.float64)).features
        k = self.n_clusters if self.n_clusters is not None else self.n_conceptions_
        k = max(k, dataset.num_labeled_classes)
        km = ss_kmeans(
            feats,
            dataset.labels,
            k=k,
            seed=int(derive_rngs(self.random_state)["eval"].integers(2**63)),
        )
        self.labels_ = km.labels
        self.cluster_centers_ = km.centroids
        return self

    def fit_predict(self, X, y) -> np.ndarray:
        """Fit on partially labeled data and return the cluster labels."""
        return self.fit(X, y).labels_

    def transform(self, X) -> np.ndarray:
        """Map data to the learned unit-norm feature space."""
        check_is_fitted(self, "encoder_params_")
        X = check_array(X, dtype=np.float64)
        return forward(self.encoder_params_, X).features

    def predict(self, X) -> np.ndarray:
        """Assign new data to the nearest fitted cluster centroid."""
        check_is_fitted(self, "cluster_centers_")
        feats = self.transform(X)
        d2 = ((feats[:, None, :] - self.cluster_centers_[None, :, :]) ** 2).sum(axis=2)
        return d2.argmin(axis=1)
