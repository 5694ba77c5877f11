"""Small trainable encoder: feature extractor plus projection head.

Both stages are tanh MLPs (tanh keeps finite-difference gradient checks
clean) whose final outputs are L2-row-normalized.  Forward returns a cache
sufficient for an exact backward pass, including the normalization
Jacobian (I - y y^T) / ||x||.  Optimization is SGD with momentum under a
cosine learning-rate schedule, with separate base rates for extractor and
head.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .validation import as_float_matrix, check_finite

__all__ = [
    "EncoderConfig",
    "EncoderGrads",
    "EncoderParams",
    "ForwardResult",
    "OptimState",
    "augment",
    "backward",
    "cosine_lr",
    "forward",
    "grads_add",
    "grads_zeros_like",
    "load_checkpoint",
    "save_checkpoint",
    "sgd_step",
]

_CKPT_MAGIC = b"DCCLCKPT"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    hidden_dim: int = 64
    feature_dim: int = 32
    head_hidden_dim: int = 32
    projection_dim: int = 128

    def __post_init__(self):
        for name in ("hidden_dim", "feature_dim", "head_hidden_dim", "projection_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


def _check_stack(layers, name: str, expected_in: int | None) -> int:
    width = expected_in
    for idx, (w, b) in enumerate(layers):
        if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[1]:
            raise ValueError(f"{name} layer {idx} has inconsistent shapes")
        if width is not None and w.shape[0] != width:
            raise ValueError(f"{name} layer {idx} input width {w.shape[0]} != {width}")
        check_finite(w, f"{name} layer {idx} weights")
        check_finite(b, f"{name} layer {idx} bias")
        width = w.shape[1]
    return width


class EncoderParams:
    """Extractor and head weights as lists of (W, b) float64 arrays."""

    def __init__(self, extractor, head):
        self.extractor = [(np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64))
                          for w, b in extractor]
        self.head = [(np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64))
                     for w, b in head]
        if not self.extractor or not self.head:
            raise ValueError("extractor and head each need at least one layer")
        feature_dim = _check_stack(self.extractor, "extractor", None)
        _check_stack(self.head, "head", feature_dim)
        self.version = 0

    @property
    def input_dim(self) -> int:
        return self.extractor[0][0].shape[0]

    @property
    def feature_dim(self) -> int:
        return self.extractor[-1][0].shape[1]

    @property
    def projection_dim(self) -> int:
        return self.head[-1][0].shape[1]

    @classmethod
    def initialize(cls, input_dim: int, cfg: EncoderConfig, rng: np.random.Generator) -> "EncoderParams":
        def stack(dims):
            layers = []
            for d_in, d_out in zip(dims[:-1], dims[1:]):
                w = rng.normal(0.0, 1.0 / math.sqrt(d_in), size=(d_in, d_out))
                layers.append((w, np.zeros(d_out)))
            return layers

        ext = stack([input_dim, cfg.hidden_dim, cfg.feature_dim])
        head = stack([cfg.feature_dim, cfg.head_hidden_dim, cfg.projection_dim])
        return cls(ext, head)


@dataclass
class EncoderGrads:
    extractor: list
    head: list


def grads_zeros_like(params: EncoderParams) -> EncoderGrads:
    return EncoderGrads(
        extractor=[(np.zeros_like(w), np.zeros_like(b)) for w, b in params.extractor],
        head=[(np.zeros_like(w), np.zeros_like(b)) for w, b in params.head],
    )


def grads_add(into: EncoderGrads, other: EncoderGrads) -> EncoderGrads:
    for (gw, gb), (ow, ob) in zip(into.extractor, other.extractor):
        gw += ow
        gb += ob
    for (gw, gb), (ow, ob) in zip(into.head, other.head):
        gw += ow
        gb += ob
    return into


def _mlp_forward(layers, x: np.ndarray) -> list[np.ndarray]:
    """Activations [input, tanh(a_1), ..., raw last-layer output]."""
    acts = [x]
    last = len(layers) - 1
    for idx, (w, b) in enumerate(layers):
        a = acts[-1] @ w + b
        acts.append(np.tanh(a) if idx < last else a)
    return acts


def _mlp_backward(layers, acts, d_raw_out):
    grads = []
    d_a = d_raw_out
    for idx in range(len(layers) - 1, -1, -1):
        w, _ = layers[idx]
        grads.append((acts[idx].T @ d_a, d_a.sum(axis=0)))
        d_h = d_a @ w.T
        d_a = d_h * (1.0 - acts[idx] ** 2) if idx > 0 else d_h
    grads.reverse()
    return grads, d_a


def _normalize(raw: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(raw, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise ValueError(f"{what} row {bad} has zero norm; cannot normalize")
    return raw / norms[:, None], norms


def _normalize_backward(d_unit, unit, norms):
    inner = np.sum(d_unit * unit, axis=1, keepdims=True)
    return (d_unit - inner * unit) / norms[:, None]


@dataclass(frozen=True)
class ForwardResult:
    features: np.ndarray
    projections: np.ndarray
    cache: dict = field(repr=False)


def forward(params: EncoderParams, inputs) -> ForwardResult:
    """Unit-norm features f(x) and projections h(f(x)), plus a backward cache."""
    x = as_float_matrix(inputs, "inputs")
    if x.shape[1] != params.input_dim:
        raise ValueError(f"input width {x.shape[1]} != encoder input dim {params.input_dim}")
    ext_acts = _mlp_forward(params.extractor, x)
    features, f_norms = _normalize(ext_acts[-1], "extractor output")
    head_acts = _mlp_forward(params.head, features)
    projections, p_norms = _normalize(head_acts[-1], "head output")
    cache = {
        "params": params,
        "version": params.version,
        "ext_acts": ext_acts,
        "head_acts": head_acts,
        "features": features,
        "f_norms": f_norms,
        "projections": projections,
        "p_norms": p_norms,
    }
    return ForwardResult(features=features, projections=projections, cache=cache)


def backward(cache: dict, d_features=None, d_projections=None) -> EncoderGrads:
    """Exact parameter gradients for upstream feature/projection gradients."""
    params: EncoderParams = cache["params"]
    if cache["version"] != params.version:
        raise ValueError("stale forward cache: parameters were updated since forward()")
    if d_features is None and d_projections is None:
        raise ValueError("backward needs at least one upstream gradient")

    features = cache["features"]
    d_feat_total = np.zeros_like(features)
    if d_features is not None:
        d_feat_total += np.asarray(d_features, dtype=np.float64)

    if d_projections is not None:
        d_p_raw = _normalize_backward(
            np.asarray(d_projections, dtype=np.float64),
            cache["projections"],
            cache["p_norms"],
        )
        head_grads, d_head_in = _mlp_backward(params.head, cache["head_acts"], d_p_raw)
        d_feat_total += d_head_in
    else:
        head_grads = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params.head]

    d_f_raw = _normalize_backward(d_feat_total, features, cache["f_norms"])
    ext_grads, _ = _mlp_backward(params.extractor, cache["ext_acts"], d_f_raw)
    return EncoderGrads(extractor=ext_grads, head=head_grads)


def cosine_lr(base: float, epoch: int, max_epoch: int) -> float:
    """Cosine annealing: base at epoch 0 down to 0 at epoch == max_epoch."""
    if max_epoch <= 0:
        raise ValueError("max_epoch must be >= 1")
    if not 0 <= epoch <= max_epoch:
        raise ValueError(f"epoch {epoch} outside [0, {max_epoch}]")
    return base * (1.0 + math.cos(math.pi * epoch / max_epoch)) / 2.0


@dataclass
class OptimState:
    velocities: EncoderGrads
    lr_extractor: float
    lr_head: float
    momentum: float
    max_epoch: int
    epoch: int = 0
    step: int = 0

    @classmethod
    def create(
        cls,
        params: EncoderParams,
        lr_extractor: float,
        lr_head: float,
        momentum: float,
        max_epoch: int,
    ) -> "OptimState":
        return cls(
            velocities=grads_zeros_like(params),
            lr_extractor=lr_extractor,
            lr_head=lr_head,
            momentum=momentum,
            max_epoch=max_epoch,
        )

    def current_lrs(self) -> tuple[float, float]:
        return (
            cosine_lr(self.lr_extractor, self.epoch, self.max_epoch),
            cosine_lr(self.lr_head, self.epoch, self.max_epoch),
        )


def sgd_step(params: EncoderParams, grads: EncoderGrads, opt: OptimState) -> EncoderParams:
    """velocity = momentum * velocity + grad; param -= lr(epoch) * velocity."""
    lr_ext, lr_head = opt.current_lrs()
    for (w, b), (gw, gb), (vw, vb) in zip(params.extractor, grads.extractor, opt.velocities.extractor):
        vw *= opt.momentum
        vw += gw
        vb *= opt.momentum
        vb += gb
        w -= lr_ext * vw
        b -= lr_ext * vb
    for (w, b), (gw, gb), (vw, vb) in zip(params.head, grads.head, opt.velocities.head):
        vw *= opt.momentum
        vw += gw
        vb *= opt.momentum
        vb += gb
        w -= lr_head * vw
        b -= lr_head * vb
    opt.step += 1
    params.version += 1
    return params


def augment(inputs, strength: float, seed: int, dropout: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Two independent feature-space views: Gaussian noise with sigma =
    strength plus coordinate dropout with probability strength / 2."""
    x = as_float_matrix(inputs, "inputs")
    if strength < 0.0:
        raise ValueError("strength must be >= 0")
    if strength == 0.0:
        return x.copy(), x.copy()
    rng = np.random.default_rng(seed)
    views = []
    for _ in range(2):
        view = x + rng.normal(0.0, strength, size=x.shape)
        if dropout:
            keep = rng.random(size=x.shape) >= strength / 2.0
            view = view * keep
        views.append(view)
    return views[0], views[1]


def save_checkpoint(path, params: EncoderParams, meta: dict | None = None) -> None:
    """Binary dump of all parameter tensors with a JSON shape manifest."""
    tensors = []
    buffers = []
    for stack_name, stack in (("extractor", params.extractor), ("head", params.head)):
        for idx, (w, b) in enumerate(stack):
            for suffix, arr in (("W", w), ("b", b)):
                tensors.append(
                    {"name": f"{stack_name}.{idx}.{suffix}", "shape": list(arr.shape)}
                )
                buffers.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    header = json.dumps(
        {"version": _CKPT_VERSION, "meta": meta or {}, "tensors": tensors},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for buf in buffers:
            fh.write(buf)


def load_checkpoint(path) -> tuple[EncoderParams, dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(_CKPT_MAGIC) + 4 or blob[: len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (header_len,) = struct.unpack_from("<I", blob, len(_CKPT_MAGIC))
    offset = len(_CKPT_MAGIC) + 4
    header = json.loads(blob[offset : offset + header_len].decode("utf-8"))
    if header.get("version") != _CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version")
    offset += header_len

    arrays: dict[str, np.ndarray] = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        size = 8 * int(np.prod(shape)) if shape else 8
        arr = np.frombuffer(blob, dtype="<f8", count=int(np.prod(shape)), offset=offset)
        arrays[spec["name"]] = arr.reshape(shape).astype(np.float64)
        offset += size
    if offset != len(blob):
        raise ValueError(f"{path}: trailing bytes in checkpoint")

    def stack(prefix):
        layers = []
        idx = 0
        while f"{prefix}.{idx}.W" in arrays:
            layers.append((arrays[f"{prefix}.{idx}.W"], arrays[f"{prefix}.{idx}.b"]))
            idx += 1
        return layers

    return EncoderParams(stack("extractor"), stack("head")), header.get("meta", {})
