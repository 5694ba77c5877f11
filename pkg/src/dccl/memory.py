"""Conception memory buffer: one prototype row per conception.

Rows are mean-initialized from member features and momentum-updated one
instance at a time.  Storage is exactly K x D; no per-instance state is
kept.  Rows are renormalized to unit length after every change unless
``renormalize=False`` (which preserves the raw convex-combination update
for comparison runs).
"""

from __future__ import annotations

import numpy as np

from .infomap import ConceptionAssignment
from .validation import as_float_matrix, check_row_aligned, check_unit_rows

__all__ = ["ConceptionMemory"]


class ConceptionMemory:
    """K x D buffer of conception representations with momentum updates."""

    def __init__(
        self,
        reps: np.ndarray,
        eta: float,
        assignment: ConceptionAssignment,
        renormalize: bool = True,
    ):
        reps = as_float_matrix(reps, "reps").copy()
        if not 0.0 <= eta < 1.0:
            raise ValueError(f"eta must lie in [0, 1), got {eta}")
        if reps.shape[0] != assignment.num_conceptions:
            raise ValueError(
                f"memory has {reps.shape[0]} rows, assignment has "
                f"{assignment.num_conceptions} conceptions"
            )
        if renormalize:
            check_unit_rows(reps, "memory reps", tol=1e-6)
        self.reps = reps
        self.eta = float(eta)
        self.assignment = assignment
        self.renormalize = bool(renormalize)

    @property
    def num_conceptions(self) -> int:
        return self.reps.shape[0]

    @property
    def dim(self) -> int:
        return self.reps.shape[1]

    @classmethod
    def initialize(
        cls,
        features,
        assignment: ConceptionAssignment,
        eta: float,
        renormalize: bool = True,
    ) -> "ConceptionMemory":
        """Mean of each conception's member features, then L2-renormalized."""
        feats = as_float_matrix(features, "features")
        check_row_aligned(feats, assignment.labels, "features", "assignment")
        k = assignment.num_conceptions
        sums = np.zeros((k, feats.shape[1]))
        np.add.at(sums, assignment.labels, feats)
        counts = np.bincount(assignment.labels, minlength=k).astype(np.float64)
        if np.any(counts == 0):
            raise ValueError("every conception must have at least one member")
        reps = sums / counts[:, None]
        if renormalize:
            norms = np.linalg.norm(reps, axis=1)
            if np.any(norms == 0.0):
                bad = int(np.flatnonzero(norms == 0.0)[0])
                raise ValueError(f"conception {bad} has a zero mean vector")
            reps = reps / norms[:, None]
        return cls(reps, eta, assignment, renormalize=renormalize)

    def momentum_update(self, v: np.ndarray, conception_id: int) -> "ConceptionMemory":
        """In-place update of one row: eta * row + (1 - eta) * v, renormalized."""
        c = int(conception_id)
        if not 0 <= c < self.num_conceptions:
            raise ValueError(
                f"conception id {c} out of range for {self.num_conceptions} conceptions"
            )
        v = np.asarray(v, dtype=np.float64).ravel()
        if v.shape[0] != self.dim:
            raise ValueError(f"instance vector has dim {v.shape[0]}, memory dim {self.dim}")
        row = self.eta * self.reps[c] + (1.0 - self.eta) * v
        if self.renormalize:
            norm = np.linalg.norm(row)
            if norm == 0.0:
                raise ValueError("momentum update produced a zero vector")
            row = row / norm
        self.reps[c] = row
        return self
