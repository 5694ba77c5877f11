"""Training objectives with values and analytic input gradients.

Three losses operate on unit-norm representations:

* conception contrastive loss: each instance against the memory prototypes,
  positive prototype excluded from the denominator as the method defines it
  (so the value may be negative); a flag restores the conventional softmax.
* dispersion loss: hinge on cosine between within-batch conception means,
  pushing distinct conceptions below threshold tau_m.
* instance contrastive loss: a (1 - lambda) self-supervised two-view
  InfoNCE term over all instances plus a lambda-weighted supervised
  contrastive term over the labeled subset.

Memory prototypes are constants for gradient purposes (they follow their
own momentum update rule); gradients flow only to the batch inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import UNLABELED
from .memory import ConceptionMemory
from .validation import as_float_matrix, as_label_vector

__all__ = [
    "LossConfig",
    "LossReport",
    "TotalLoss",
    "conception_loss",
    "dispersion_loss",
    "instance_loss",
    "total_loss",
]


@dataclass(frozen=True)
class LossConfig:
    tau_c: float = 0.05
    tau_s: float = 0.07
    tau_l: float = 0.05
    tau_m: float = 0.3
    lam: float = 0.35
    alpha: float = 0.3
    beta: float = 0.1
    include_positive_in_denominator: bool = False
    dispersion_include_diagonal: bool = True

    def __post_init__(self):
        for name in ("tau_c", "tau_s", "tau_l"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be > 0")
        for name in ("lam", "tau_m"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("alpha", "beta"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class LossReport:
    """Scalar loss plus gradient(s) with respect to the inputs."""

    value: float
    grads: object

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError("loss value is not finite")
        arrays = self.grads if isinstance(self.grads, tuple) else (self.grads,)
        for arr in arrays:
            if not np.all(np.isfinite(arr)):
                raise ValueError("loss gradient contains non-finite entries")


@dataclass(frozen=True)
class TotalLoss:
    value: float
    components: tuple[float, float, float]
    grad_instance: tuple[np.ndarray, np.ndarray] | None
    grad_conception: np.ndarray | None


def _logsumexp_rows(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise logsumexp and softmax for logits that may contain -inf."""
    m = logits.max(axis=1, keepdims=True)
    shifted = np.exp(logits - m)
    denom = shifted.sum(axis=1, keepdims=True)
    lse = (m + np.log(denom)).ravel()
    return lse, shifted / denom


def conception_loss(
    batch_reps,
    batch_conceptions,
    memory: ConceptionMemory,
    tau_c: float,
    include_positive_in_denominator: bool = False,
) -> LossReport:
    """Batch-mean contrastive loss of instances against conception prototypes."""
    reps = as_float_matrix(batch_reps, "batch_reps")
    c = as_label_vector(batch_conceptions, "batch_conceptions", reps.shape[0])
    k = memory.num_conceptions
    if k < 2:
        raise ValueError("conception loss undefined with a single conception")
    if tau_c <= 0.0:
        raise ValueError("tau_c must be > 0")
    if np.any((c < 0) | (c >= k)):
        raise ValueError("conception id out of range")

    n = reps.shape[0]
    logits = reps @ memory.reps.T / tau_c
    rows = np.arange(n)
    pos = logits[rows, c]
    denom_logits = logits if include_positive_in_denominator else logits.copy()
    if not include_positive_in_denominator:
        denom_logits[rows, c] = -np.inf
    lse, softmax = _logsumexp_rows(denom_logits)
    value = float(np.mean(lse - pos))

    d_logits = softmax / n
    d_logits[rows, c] -= 1.0 / n
    grads = d_logits @ memory.reps / tau_c
    return LossReport(value=value, grads=grads)


def dispersion_loss(
    batch_reps,
    batch_conceptions,
    sampled_conceptions,
    tau_m: float,
    include_diagonal: bool = True,
) -> LossReport:
    """Hinge penalty on cosines between normalized within-batch conception means.

    Diagonal pairs contribute the constant max(1 - tau_m, 0) with zero
    gradient (a normalized mean has cosine 1 with itself); ``include_diagonal``
    drops them.  Rows whose conception is not in ``sampled_conceptions`` get
    zero gradient.
    """
    reps = as_float_matrix(batch_reps, "batch_reps")
    c = as_label_vector(batch_conceptions, "batch_conceptions", reps.shape[0])
    sampled = as_label_vector(sampled_conceptions, "sampled_conceptions")
    if sampled.size < 1:
        raise ValueError("need at least one sampled conception")
    if np.unique(sampled).size != sampled.size:
        raise ValueError("sampled_conceptions must be distinct")

    n_c = sampled.size
    member_rows = []
    means = np.empty((n_c, reps.shape[1]))
    for m, cid in enumerate(sampled):
        rows = np.flatnonzero(c == cid)
        if rows.size == 0:
            raise ValueError(f"sampled conception {int(cid)} has no representative in the batch")
        member_rows.append(rows)
        means[m] = reps[rows].mean(axis=0)
    norms = np.linalg.norm(means, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("a conception's batch mean is the zero vector")
    unit = means / norms[:, None]

    gram = unit @ unit.T
    hinge = np.maximum(gram - tau_m, 0.0)
    off_diag = ~np.eye(n_c, dtype=bool)
    total = hinge[off_diag].sum()
    if include_diagonal:
        total += np.trace(hinge)
    value = float(total / (n_c * n_c))

    active = (gram > tau_m) & off_diag
    d_unit = (2.0 / (n_c * n_c)) * (active @ unit)
    grads = np.zeros_like(reps)
    for m, rows in enumerate(member_rows):
        du = d_unit[m]
        d_mean = (du - np.dot(du, unit[m]) * unit[m]) / norms[m]
        grads[rows] += d_mean / rows.size
    return LossReport(value=value, grads=grads)


def instance_loss(
    proj_view1,
    proj_view2,
    labels,
    lam: float,
    tau_s: float,
    tau_l: float,
) -> LossReport:
    """Blend of two-view InfoNCE and supervised contrastive loss.

    The self-supervised term treats all 2N projected views as anchors with
    the paired view as positive (temperature tau_s).  The supervised term
    runs over first-view projections of labeled instances: positives are
    other instances with the same label, denominators span all other labeled
    instances (temperature tau_l); it contributes 0 when no labeled anchor
    has a positive partner.  Returns gradients for both view matrices.
    """
    z1 = as_float_matrix(proj_view1, "proj_view1")
    z2 = as_float_matrix(proj_view2, "proj_view2")
    if z1.shape != z2.shape:
        raise ValueError("view projections must have matching shapes")
    n = z1.shape[0]
    if n < 2:
        raise ValueError("instance loss needs a batch of at least 2 instances")
    y = as_label_vector(labels, "labels", n)
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    if tau_s <= 0.0 or tau_l <= 0.0:
        raise ValueError("temperatures must be > 0")

    # Self-supervised two-view InfoNCE over the 2N stacked views.
    z = np.vstack([z1, z2])
    m = 2 * n
    sim = z @ z.T / tau_s
    np.fill_diagonal(sim, -np.inf)
    pos_idx = (np.arange(m) + n) % m
    lse, softmax = _logsumexp_rows(sim)
    anchors = np.arange(m)
    self_value = float(np.mean(lse - sim[anchors, pos_idx]))
    d_sim = softmax / m
    d_sim[anchors, pos_idx] -= 1.0 / m
    dz = (d_sim + d_sim.T) @ z / tau_s
    g1 = (1.0 - lam) * dz[:n]
    g2 = (1.0 - lam) * dz[n:]

    # Supervised contrastive term over labeled first-view projections.
    sup_value = 0.0
    labeled = np.flatnonzero(y != UNLABELED)
    if labeled.size >= 2:
        zl = z1[labeled]
        yl = y[labeled]
        same = yl[:, None] == yl[None, :]
        np.fill_diagonal(same, False)
        n_pos = same.sum(axis=1)
        contributing = np.flatnonzero(n_pos > 0)
        if contributing.size > 0:
            sim_l = zl @ zl.T / tau_l
            np.fill_diagonal(sim_l, -np.inf)
            lse_l, softmax_l = _logsumexp_rows(sim_l)
            per_anchor = lse_l[contributing] - (
                np.where(same, sim_l, 0.0).sum(axis=1)[contributing]
                / n_pos[contributing]
            )
            sup_value = float(np.mean(per_anchor))

            d_sim_l = np.zeros_like(sim_l)
            d_sim_l[contributing] = softmax_l[contributing] / contributing.size
            pos_weight = same[contributing] / (
                n_pos[contributing][:, None] * contributing.size
            )
            d_sim_l[contributing] -= pos_weight
            dzl = (d_sim_l + d_sim_l.T) @ zl / tau_l
            g1[labeled] += lam * dzl

    value = (1.0 - lam) * self_value + lam * sup_value
    return LossReport(value=value, grads=(g1, g2))


def total_loss(
    instance: LossReport | None,
    conception: LossReport | None,
    dispersion: LossReport | None,
    alpha: float,
    beta: float,
) -> TotalLoss:
    """Weighted sum of the three objectives and their gradients.

    ``instance`` gradients pass through with weight 1; ``conception`` and
    ``dispersion`` gradients (both over the conception batch) combine as
    alpha * g_c + beta * g_d.  Missing parts contribute zero.
    """
    l_i = instance.value if instance is not None else 0.0
    l_c = conception.value if conception is not None else 0.0
    l_d = dispersion.value if dispersion is not None else 0.0
    value = l_i + alpha * l_c + beta * l_d

    grad_conception = None
    if conception is not None and dispersion is not None:
        if conception.grads.shape != dispersion.grads.shape:
            raise ValueError("conception and dispersion gradients must share a shape")
        grad_conception = alpha * conception.grads + beta * dispersion.grads
    elif conception is not None:
        grad_conception = alpha * conception.grads
    elif dispersion is not None:
        grad_conception = beta * dispersion.grads

    grad_instance = instance.grads if instance is not None else None
    return TotalLoss(
        value=float(value),
        components=(float(l_i), float(l_c), float(l_d)),
        grad_instance=grad_instance,
        grad_conception=grad_conception,
    )
