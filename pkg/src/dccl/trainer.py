"""Training orchestration: alternating conception generation and dual-level
contrastive learning.

Each run derives all randomness from one root seed, fanned out into named
independent streams (encoder init, batch samplers, augmentation, graph
clustering, evaluation) so that disabling one component never perturbs the
others.  Conception generation (graph build + map-equation clustering +
memory initialization) runs before the first epoch and thereafter at every
epoch divisible by ``tau_i``.  Every iteration draws a conception batch and
an instance batch, combines the weighted losses, applies one SGD step, and
momentum-updates the touched memory rows.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import encoder as enc
from .data import GcdDataset
from .infomap import ConceptionAssignment, cluster
from .losses import LossConfig, conception_loss, dispersion_loss, instance_loss, total_loss
from .memory import ConceptionMemory
from .simgraph import GraphConfig, build_consolidated_graph

__all__ = [
    "EpochLog",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "derive_rngs",
    "run",
    "sample_conception_batch",
    "sample_instance_batch",
]

_RNG_STREAMS = (
    "encoder",
    "cluster",
    "conception_sampler",
    "instance_sampler",
    "augment",
    "eval",
)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, iteration: int, value: float):
        super().__init__(
            f"non-finite loss ({value}) at epoch {epoch}, iteration {iteration}"
        )
        self.epoch = epoch
        self.iteration = iteration


@dataclass(frozen=True)
class TrainConfig:
    max_epoch: int = 50
    tau_i: int = 5
    n_c: int = 8
    n_i: int = 16
    instance_batch: int = 128
    lr_extractor: float = 0.01
    lr_head: float = 0.1
    sgd_momentum: float = 0.9
    eta: float = 0.9
    augment_strength: float = 0.3
    renorm_memory: bool = True
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    encoder: enc.EncoderConfig = field(default_factory=enc.EncoderConfig)
    use_instance_loss: bool = True
    use_conception_loss: bool = True
    use_dispersion_loss: bool = True
    use_momentum_update: bool = True
    use_consolidation: bool = True

    def __post_init__(self):
        if self.max_epoch < 1:
            raise ValueError("max_epoch must be >= 1")
        if self.tau_i < 1:
            raise ValueError("tau_i must be >= 1")
        if self.n_c < 2:
            raise ValueError("n_c must be >= 2")
        if self.n_i < 1:
            raise ValueError("n_i must be >= 1")
        if self.instance_batch < 2:
            raise ValueError("instance_batch must be >= 2")


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    num_conceptions: int
    loss_instance: float
    loss_conception: float
    loss_dispersion: float
    loss_total: float
    lr_extractor: float
    lr_head: float
    wall_time: float


@dataclass
class TrainResult:
    params: enc.EncoderParams
    assignment: ConceptionAssignment
    memory: ConceptionMemory | None
    epoch_logs: list[EpochLog]
    total_steps: int = 0

    @property
    def final_num_conceptions(self) -> int:
        return self.assignment.num_conceptions


def derive_rngs(seed: int) -> dict[str, np.random.Generator]:
    """Named independent RNG streams fanned out from one root seed."""
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(_RNG_STREAMS))
    return {name: np.random.default_rng(child) for name, child in zip(_RNG_STREAMS, children)}


def sample_conception_batch(
    assignment: ConceptionAssignment,
    n_c: int,
    n_i: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """n_c distinct conceptions, n_i members each (with replacement only when
    a conception is smaller than n_i).  Returns (instance indices, ids)."""
    k = assignment.num_conceptions
    if k < n_c:
        raise ValueError(f"cannot sample {n_c} conceptions from {k}; lower n_c")
    chosen = rng.choice(k, size=n_c, replace=False)
    batches = []
    for cid in chosen:
        members = assignment.members(int(cid))
        if members.size >= n_i:
            batches.append(rng.choice(members, size=n_i, replace=False))
        else:
            batches.append(rng.choice(members, size=n_i, replace=True))
    return np.concatenate(batches), np.asarray(chosen, dtype=np.int64)


def sample_instance_batch(
    dataset: GcdDataset, size: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Uniform sample without replacement plus its labeled-subset mask."""
    if size > dataset.count:
        raise ValueError(f"batch size {size} exceeds dataset size {dataset.count}")
    idx = rng.choice(dataset.count, size=size, replace=False)
    return idx, dataset.labeled_mask[idx]


def _log_line(stream, epoch, it, k, l_i, l_c, l_d, l_tot, lr):
    if stream is not None:
        stream.write(
            f"{epoch},{it},{k},{l_i:.12g},{l_c:.12g},{l_d:.12g},{l_tot:.12g},{lr:.12g}\n"
        )


def run(dataset: GcdDataset, cfg: TrainConfig, log_stream=None) -> TrainResult:
    """Train encoder and memory on a dataset; returns final state and logs.

    ``log_stream``, if given, receives one ``epoch,iter,K,L_I,L_C,L_D,
    L_total,lr`` line per iteration.
    """
    rngs = derive_rngs(cfg.seed)
    x = dataset.embeddings.data.astype(np.float64)
    m = dataset.count

    params = enc.EncoderParams.initialize(x.shape[1], cfg.encoder, rngs["encoder"])
    opt = enc.OptimState.create(
        params, cfg.lr_extractor, cfg.lr_head, cfg.sgd_momentum, cfg.max_epoch
    )

    labels_for_graph = dataset.labels if cfg.use_consolidation else None
    assignment: ConceptionAssignment | None = None
    memory: ConceptionMemory | None = None
    epoch_logs: list[EpochLog] = []
    iters_per_epoch = math.ceil(m / min(cfg.instance_batch, m))
    batch_size = min(cfg.instance_batch, m)

    for epoch in range(1, cfg.max_epoch + 1):
        tic = time.perf_counter()
        if assignment is None or epoch % cfg.tau_i == 0:
            feats = enc.forward(params, x).features
            graph = build_consolidated_graph(feats, labels_for_graph, cfg.graph)
            assignment = cluster(graph, seed=int(rngs["cluster"].integers(2**63)))
            memory = ConceptionMemory.initialize(
                feats, assignment, cfg.eta, renormalize=cfg.renorm_memory
            )
        k = assignment.num_conceptions
        opt.epoch = epoch - 1
        lr_ext, lr_head = opt.current_lrs()

        sums = np.zeros(4)
        for it in range(1, iters_per_epoch + 1):
            conception_fwd = None
            conception_idx = None
            report_c = None
            report_d = None
            need_conception = (cfg.use_conception_loss or cfg.use_dispersion_loss) and k >= 2
            if need_conception:
                n_c_eff = min(cfg.n_c, k)
                conception_idx, sampled_ids = sample_conception_batch(
                    assignment, n_c_eff, cfg.n_i, rngs["conception_sampler"]
                )
                conception_fwd = enc.forward(params, x[conception_idx])
                batch_cids = assignment.labels[conception_idx]
                if cfg.use_conception_loss:
                    report_c = conception_loss(
                        conception_fwd.features,
                        batch_cids,
                        memory,
                        cfg.loss.tau_c,
                        include_positive_in_denominator=cfg.loss.include_positive_in_denominator,
                    )
                if cfg.use_dispersion_loss:
                    report_d = dispersion_loss(
                        conception_fwd.features,
                        batch_cids,
                        sampled_ids,
                        cfg.loss.tau_m,
                        include_diagonal=cfg.loss.dispersion_include_diagonal,
                    )

            report_i = None
            view_fwds = None
            if cfg.use_instance_loss:
                inst_idx, _ = sample_instance_batch(dataset, batch_size, rngs["instance_sampler"])
                v1, v2 = enc.augment(
                    x[inst_idx],
                    cfg.augment_strength,
                    seed=int(rngs["augment"].integers(2**63)),
                )
                f1 = enc.forward(params, v1)
                f2 = enc.forward(params, v2)
                view_fwds = (f1, f2)
                report_i = instance_loss(
                    f1.projections,
                    f2.projections,
                    dataset.labels[inst_idx],
                    cfg.loss.lam,
                    cfg.loss.tau_s,
                    cfg.loss.tau_l,
                )

            total = total_loss(report_i, report_c, report_d, cfg.loss.alpha, cfg.loss.beta)
            if not np.isfinite(total.value):
                raise TrainingDiverged(epoch, it, total.value)

            grads = enc.grads_zeros_like(params)
            if total.grad_conception is not None and conception_fwd is not None:
                enc.grads_add(
                    grads,
                    enc.backward(conception_fwd.cache, d_features=total.grad_conception),
                )
            if total.grad_instance is not None and view_fwds is not None:
                g1, g2 = total.grad_instance
                enc.grads_add(grads, enc.backward(view_fwds[0].cache, d_projections=g1))
                enc.grads_add(grads, enc.backward(view_fwds[1].cache, d_projections=g2))
            enc.sgd_step(params, grads, opt)

            if cfg.use_momentum_update and memory is not None and conception_fwd is not None:
                for row, cid in zip(conception_fwd.features, assignment.labels[conception_idx]):
                    memory.momentum_update(row, int(cid))

            l_i, l_c, l_d = total.components
            sums += (l_i, l_c, l_d, total.value)
            _log_line(log_stream, epoch, it, k, l_i, l_c, l_d, total.value, lr_ext)

        means = sums / iters_per_epoch
        epoch_logs.append(
            EpochLog(
                epoch=epoch,
                num_conceptions=k,
                loss_instance=float(means[0]),
                loss_conception=float(means[1]),
                loss_dispersion=float(means[2]),
                loss_total=float(means[3]),
                lr_extractor=lr_ext,
                lr_head=lr_head,
                wall_time=time.perf_counter() - tic,
            )
        )

    return TrainResult(
        params=params,
        assignment=assignment,
        memory=memory,
        epoch_logs=epoch_logs,
        total_steps=opt.step,
    )
