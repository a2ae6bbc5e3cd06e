"""Adam and the per-epoch training loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .augment import AugmentConfig, augment_epoch, feature_stds
from .core import AUGMENT, INIT, SHUFFLE, Dataset, RngStream


class DivergenceError(FloatingPointError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: dict[str, np.ndarray], **hyper) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            **hyper,
        )

    def copy(self) -> "AdamState":
        return AdamState(
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
            self.t,
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
        )


def adam_step(params: dict, grads: dict, state: AdamState, lr: float | None = None):
    """One Adam update; returns new ``(params, state)`` and leaves the inputs untouched.

    ``lr`` overrides ``state.lr`` for this step (used by the cosine schedule).
    """
    if set(params) != set(grads):
        raise ValueError(f"gradient blocks {sorted(grads)} do not match parameters {sorted(params)}")
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in parameter block {k!r}")
    lr = state.lr if lr is None else lr
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_params, m_new, v_new = {}, {}, {}
    for k, theta in params.items():
        g = grads[k]
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        new_params[k] = theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        m_new[k], v_new[k] = m, v
    return new_params, AdamState(m_new, v_new, t, state.lr, b1, b2, state.eps)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr: float = 2e-4
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0
    batch_size: int = 1
    cosine_decay: bool = False
    weight_decay: float = 0.0
    # max global L2 norm of a step's gradient; 0 disables clipping
    grad_clip: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.weight_decay < 0 or self.grad_clip < 0:
            raise ValueError("weight_decay and grad_clip must be >= 0")


def _lr_at(cfg: TrainConfig, epoch: int) -> float:
    if not cfg.cosine_decay:
        return cfg.lr
    return 0.5 * cfg.lr * (1.0 + math.cos(math.pi * epoch / cfg.epochs))


def _regularise(grads: dict, params: dict, cfg: TrainConfig) -> dict:
    if cfg.weight_decay:
        grads = {k: g + cfg.weight_decay * params[k] for k, g in grads.items()}
    if cfg.grad_clip:
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if norm > cfg.grad_clip:
            grads = {k: g * (cfg.grad_clip / norm) for k, g in grads.items()}
    return grads


def train_one(train: Dataset, train_config: TrainConfig, model_config: M.ModelConfig, rng: RngStream | None = None):
    """Train one model from scratch; returns ``(model, per-epoch mean loss)``.

    Randomness is drawn from three child streams of ``train_config.seed``
    (or of ``rng.seed`` when a stream is passed): initialisation, the
    augmentation of each epoch, and the visiting order of each epoch.
    """
    if len(train) == 0:
        raise ValueError("empty training set")
    if model_config.D != train.D or model_config.C != train.C:
        raise ValueError(f"model expects D={model_config.D}, C={model_config.C}; data has D={train.D}, C={train.C}")
    seed = train_config.seed if rng is None else rng.seed
    path = () if rng is None else rng.path
    net = M.init(model_config, RngStream(seed, INIT, path))
    aug_root = RngStream(seed, AUGMENT, path)
    order_root = RngStream(seed, SHUFFLE, path)
    state = AdamState.fresh(net.params, lr=train_config.lr)
    dim_stds = feature_stds(train) if train_config.augment.kind == "gaussian_noise" else None

    params = net.params
    curve = []
    bs = train_config.batch_size
    for epoch in range(train_config.epochs):
        view = augment_epoch(train, train_config.augment, aug_root.child(epoch), dim_stds)
        order = order_root.child(epoch).permutation(len(view))
        lr = _lr_at(train_config, epoch)
        total = 0.0
        for start in range(0, len(order), bs):
            batch = order[start : start + bs]
            acc = None
            for i in batch:
                L, g, _ = M.loss_and_grad(net, view.bags[i], view.labels[i])
                if not math.isfinite(L):
                    raise DivergenceError(f"non-finite loss at epoch {epoch}", epoch)
                total += L
                acc = g if acc is None else {k: acc[k] + g[k] for k in acc}
            grads = {k: a / len(batch) for k, a in acc.items()}
            grads = _regularise(grads, params, train_config)
            try:
                params, state = adam_step(params, grads, state, lr)
            except DivergenceError as exc:
                raise DivergenceError(f"{exc} at epoch {epoch}", epoch) from None
            net.params = params
        curve.append(total / len(order))
    return net, curve


def accuracy(net: M.DualStreamModel, data: Dataset) -> float:
    hits = sum(M.predict(net, b) == lab.hard for b, lab in zip(data.bags, data.labels))
    return hits / len(data)


def write_loss_curve(curve, path) -> None:
    with open(path, "w") as f:
        f.write("epoch,mean_loss\n")
        for e, v in enumerate(curve):
            f.write(f"{e},{v!r}\n")
