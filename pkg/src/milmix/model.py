"""Dual-stream MIL classifier with hand-written reverse-mode gradients.

Instance stream: per-patch class scores ``S = X W_inst^T + b_inst``, pooled
by max. The argmax patch per class is that class's critical instance.

Embedding stream: queries ``Q = act(X W_q^T)`` and values ``V = X W_v^T``.
For class ``c`` the attention over patches is
``softmax_i(<Q_i, Q_{m_c}> / sqrt(H))``, the bag embedding is the attended
sum of values, and its logit is ``<W_emb[c], B_c> + b_emb[c]``.

The two streams are fused by a normalised weighted sum of their logits.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import FeatureBag, RngStream, SoftLabel

EPS = 1e-12
PARAM_ORDER = ("W_inst", "b_inst", "W_q", "W_v", "W_emb", "b_emb")

# (lambda_inst, lambda_emb)
PRESETS = {
    "INST": (1.0, 0.0),
    "EMB": (0.0, 1.0),
    "3/1": (3.0, 1.0),
    "2/2": (2.0, 2.0),
    "1/3": (1.0, 3.0),
}


@dataclass(frozen=True)
class ModelConfig:
    D: int
    C: int = 2
    lambda_inst: float = 2.0
    lambda_emb: float = 2.0
    H: int = 128
    E: int = 128
    query_activation: str = "identity"
    # weight of an extra cross-entropy on the instance-stream logits; 0 disables it
    aux_loss_weight: float = 0.0

    def __post_init__(self):
        for name in ("D", "C", "H", "E"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lambda_inst < 0 or self.lambda_emb < 0 or self.lambda_inst + self.lambda_emb <= 0:
            raise ValueError(
                f"fusion weights must be >= 0 with a positive sum, got ({self.lambda_inst}, {self.lambda_emb})"
            )
        if self.query_activation not in ("identity", "tanh"):
            raise ValueError(f"query_activation must be 'identity' or 'tanh', got {self.query_activation!r}")
        if self.aux_loss_weight < 0:
            raise ValueError("aux_loss_weight must be >= 0")

    def with_preset(self, name: str) -> "ModelConfig":
        if name not in PRESETS:
            raise ValueError(f"unknown fusion preset {name!r}; expected one of {list(PRESETS)}")
        li, le = PRESETS[name]
        return replace(self, lambda_inst=li, lambda_emb=le)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        D, C, H, E = self.D, self.C, self.H, self.E
        return {
            "W_inst": (C, D),
            "b_inst": (C,),
            "W_q": (H, D),
            "W_v": (E, D),
            "W_emb": (C, E),
            "b_emb": (C,),
        }


@dataclass
class DualStreamModel:
    config: ModelConfig
    params: dict[str, np.ndarray]

    def __post_init__(self):
        shapes = self.config.shapes()
        if set(self.params) != set(shapes):
            raise ValueError(f"parameter blocks {sorted(self.params)} do not match {sorted(shapes)}")
        for k, shp in shapes.items():
            p = np.asarray(self.params[k], dtype=np.float64)
            if p.shape != shp:
                raise ValueError(f"{k}: shape {p.shape}, expected {shp}")
            if not np.all(np.isfinite(p)):
                raise ValueError(f"{k}: non-finite parameters")
            self.params[k] = p

    def copy(self) -> "DualStreamModel":
        return DualStreamModel(self.config, {k: v.copy() for k, v in self.params.items()})

    @classmethod
    def zeros(cls, config: ModelConfig) -> "DualStreamModel":
        return cls(config, {k: np.zeros(s) for k, s in config.shapes().items()})


@dataclass
class ForwardTrace:
    instance_scores: np.ndarray  # P x C
    critical_indices: np.ndarray  # C
    attention_weights: np.ndarray  # C x P
    bag_embeddings: np.ndarray  # C x E
    logits_inst: np.ndarray
    logits_emb: np.ndarray
    logits_fused: np.ndarray
    probs: np.ndarray
    probs_inst: np.ndarray
    aux_loss_weight: float = 0.0
    # backprop caches
    X: np.ndarray = field(default=None, repr=False)
    Q: np.ndarray = field(default=None, repr=False)
    V: np.ndarray = field(default=None, repr=False)


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def fusion_weights(config: ModelConfig) -> tuple[float, float]:
    lam = config.lambda_inst + config.lambda_emb
    return config.lambda_inst / lam, config.lambda_emb / lam


def init(config: ModelConfig, rng: RngStream) -> DualStreamModel:
    """Glorot-uniform weights, zero biases."""
    params = {}
    for k in PARAM_ORDER:
        shp = config.shapes()[k]
        if len(shp) == 1:
            params[k] = np.zeros(shp)
        else:
            fan_out, fan_in = shp
            a = math.sqrt(6.0 / (fan_in + fan_out))
            params[k] = rng.uniform(-a, a, size=shp)
    return DualStreamModel(config, params)


def forward(model: DualStreamModel, bag: FeatureBag | np.ndarray) -> ForwardTrace:
    X = bag.features if isinstance(bag, FeatureBag) else np.asarray(bag, dtype=np.float64)
    cfg, p = model.config, model.params
    if X.ndim != 2 or X.shape[1] != cfg.D:
        raise ValueError(f"bag has shape {X.shape}, model expects D={cfg.D}")
    C = cfg.C

    S = X @ p["W_inst"].T + p["b_inst"]
    m = np.argmax(S, axis=0)  # first maximum wins ties
    logits_inst = S[m, np.arange(C)]

    U = X @ p["W_q"].T
    Q = np.tanh(U) if cfg.query_activation == "tanh" else U
    V = X @ p["W_v"].T
    A = softmax(Q[m] @ Q.T / math.sqrt(cfg.H), axis=1)  # C x P
    B = A @ V  # C x E
    logits_emb = np.einsum("ce,ce->c", p["W_emb"], B) + p["b_emb"]

    w_inst, w_emb = fusion_weights(cfg)
    fused = w_inst * logits_inst + w_emb * logits_emb
    probs = softmax(fused)
    if not np.all(np.isfinite(fused)):
        raise FloatingPointError("non-finite logits in forward pass (training diverged?)")
    return ForwardTrace(
        instance_scores=S,
        critical_indices=m,
        attention_weights=A,
        bag_embeddings=B,
        logits_inst=logits_inst,
        logits_emb=logits_emb,
        logits_fused=fused,
        probs=probs,
        probs_inst=softmax(logits_inst),
        aux_loss_weight=cfg.aux_loss_weight,
        X=X,
        Q=Q,
        V=V,
    )


def cross_entropy(probs, label) -> float:
    y = label.probs if isinstance(label, SoftLabel) else np.asarray(label, dtype=np.float64)
    return float(-np.sum(y * np.log(probs + EPS)))


def loss(trace: ForwardTrace, label: SoftLabel) -> float:
    value = cross_entropy(trace.probs, label)
    if trace.aux_loss_weight > 0:
        value += trace.aux_loss_weight * cross_entropy(trace.probs_inst, label)
    return value


def _ce_logit_grad(probs, y):
    # d/dz of -sum y log(softmax(z) + eps), eps included so finite differences agree
    g = -y / (probs + EPS)
    return probs * (g - probs @ g)


def backward(model: DualStreamModel, bag, label: SoftLabel, trace: ForwardTrace) -> dict[str, np.ndarray]:
    """Exact gradients of :func:`loss` for every parameter block.

    The max pooling routes its subgradient through the critical row only; the
    critical query's own dependence on ``W_q`` is part of the chain.
    """
    cfg, p = model.config, model.params
    y = label.probs if isinstance(label, SoftLabel) else np.asarray(label, dtype=np.float64)
    X, Q, V, A, B, m = trace.X, trace.Q, trace.V, trace.attention_weights, trace.bag_embeddings, trace.critical_indices
    C = cfg.C
    w_inst, w_emb = fusion_weights(cfg)

    d_fused = _ce_logit_grad(trace.probs, y)
    d_inst = d_fused * w_inst
    d_emb = d_fused * w_emb
    if trace.aux_loss_weight > 0:
        d_inst = d_inst + trace.aux_loss_weight * _ce_logit_grad(trace.probs_inst, y)

    grads = {}
    # instance stream: only the critical row of each class column receives gradient
    dS = np.zeros_like(trace.instance_scores)
    dS[m, np.arange(C)] = d_inst
    grads["W_inst"] = dS.T @ X
    grads["b_inst"] = d_inst.copy()

    # embedding stream
    grads["W_emb"] = d_emb[:, None] * B
    grads["b_emb"] = d_emb.copy()
    dB = d_emb[:, None] * p["W_emb"]  # C x E
    dA = dB @ V.T  # C x P
    dV = A.T @ dB  # P x E
    grads["W_v"] = dV.T @ X
    dZ = A * (dA - np.sum(A * dA, axis=1, keepdims=True)) / math.sqrt(cfg.H)  # C x P
    dQ = dZ.T @ Q[m]  # from keys
    np.add.at(dQ, m, dZ @ Q)  # from each critical query
    if cfg.query_activation == "tanh":
        dQ = dQ * (1.0 - Q * Q)
    grads["W_q"] = dQ.T @ X
    return grads


def loss_and_grad(model: DualStreamModel, bag, label: SoftLabel):
    trace = forward(model, bag)
    return loss(trace, label), backward(model, bag, label, trace), trace


def predict(model: DualStreamModel, bag) -> int:
    return int(np.argmax(forward(model, bag).logits_fused))


# checkpoint: b"MILC", uint32 version, uint32 header length, UTF-8 JSON header,
# then every block of PARAM_ORDER as little-endian binary32, row-major
_CKPT_MAGIC = b"MILC"
_CKPT_HEAD = struct.Struct("<4sII")


def save_checkpoint(model: DualStreamModel, path, seed: int | None = None) -> None:
    header = json.dumps({"config": asdict(model.config), "seed": seed, "order": list(PARAM_ORDER)}, sort_keys=True)
    hb = header.encode("utf-8")
    blob = b"".join(np.ascontiguousarray(model.params[k], dtype="<f4").tobytes() for k in PARAM_ORDER)
    Path(path).write_bytes(_CKPT_HEAD.pack(_CKPT_MAGIC, 1, len(hb)) + hb + blob)


def load_checkpoint(path) -> tuple[DualStreamModel, int | None]:
    buf = Path(path).read_bytes()
    magic, version, n = _CKPT_HEAD.unpack_from(buf)
    if magic != _CKPT_MAGIC or version != 1:
        raise ValueError(f"{path}: not a version-1 model checkpoint")
    header = json.loads(buf[_CKPT_HEAD.size : _CKPT_HEAD.size + n].decode("utf-8"))
    cfg = ModelConfig(**header["config"])
    offset = _CKPT_HEAD.size + n
    params = {}
    for k in PARAM_ORDER:
        shp = cfg.shapes()[k]
        count = int(np.prod(shp))
        if offset + 4 * count > len(buf):
            raise ValueError(f"{path}: checkpoint truncated in block {k}")
        params[k] = np.frombuffer(buf, dtype="<f4", count=count, offset=offset).reshape(shp).astype(np.float64)
        offset += 4 * count
    return DualStreamModel(cfg, params), header.get("seed")
