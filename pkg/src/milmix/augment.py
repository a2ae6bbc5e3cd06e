"""Feature-level augmentation: MixUp variants and the sampling/noise baselines.

Every operator is a pure function of its inputs and the state of the
:class:`~milmix.core.RngStream` it is handed.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import Dataset, FeatureBag, RngStream, SoftLabel, shuffle_bag

KINDS = (
    "none",
    "inter_v1",
    "inter_v2",
    "intra_linear",
    "intra_multilinear",
    "random_sampling",
    "selective_sampling",
    "gaussian_noise",
)
INTRA_KINDS = ("intra_linear", "intra_multilinear")


@dataclass(frozen=True)
class AugmentConfig:
    kind: str = "none"
    beta: float = 1.0
    q: float = 0.5
    sigma: float = 0.1
    # inter_v1 only: "uniform" picks the class uniformly, "empirical" by frequency
    v1_class_prior: str = "uniform"
    allow_self_pair: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown augmentation kind {self.kind!r}; expected one of {KINDS}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if not 0.0 < self.q <= 1.0:
            raise ValueError(f"q must lie in (0, 1], got {self.q}")
        if not (self.sigma >= 0.0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be finite and >= 0, got {self.sigma}")
        if self.v1_class_prior not in ("uniform", "empirical"):
            raise ValueError(f"v1_class_prior must be 'uniform' or 'empirical', got {self.v1_class_prior!r}")

    @property
    def label(self) -> str:
        """Short human-readable name including only the parameters ``kind`` uses."""
        if self.kind in INTRA_KINDS:
            return f"{self.kind}(beta={self.beta:g})"
        if self.kind in ("random_sampling", "selective_sampling"):
            return f"{self.kind}(q={self.q:g})"
        if self.kind == "gaussian_noise":
            return f"{self.kind}(sigma={self.sigma:g})"
        return self.kind

    def to_dict(self) -> dict:
        return asdict(self)


def _lerp(a, x_i, x_j):
    # rounding can push a*x + (1-a)*y one ulp past its parents; clamp so the
    # convex-hull property (and equal parents -> same point) holds exactly
    out = a * x_i + (1.0 - a) * x_j
    return np.clip(out, np.minimum(x_i, x_j), np.maximum(x_i, x_j), out=out)


def mixup_pair(x_i, x_j, alpha: float) -> np.ndarray:
    """``alpha * x_i + (1 - alpha) * x_j``; ``alpha`` may be a scalar or a per-coordinate vector."""
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    if x_i.shape != x_j.shape:
        raise ValueError(f"shape mismatch: {x_i.shape} vs {x_j.shape}")
    a = np.asarray(alpha, dtype=np.float64)
    if np.any(a < 0) or np.any(a > 1):
        raise ValueError("alpha must lie in [0, 1]")
    return _lerp(a, x_i, x_j)


def _common_shape(train: Dataset) -> tuple[int, int]:
    shapes = {b.features.shape for b in train.bags}
    if len(shapes) != 1:
        raise ValueError(f"inter-bag mixup needs bags of one common shape, got {sorted(shapes)}")
    return next(iter(shapes))


def _draw_partner(rng: RngStream, pool: np.ndarray, w: int, allow_self: bool) -> int:
    if allow_self or pool.size < 2:
        return int(pool[rng.integers(pool.size)])
    others = pool[pool != w]
    return int(others[rng.integers(others.size)])


def inter_mixup(train: Dataset, variant: str, rng: RngStream, config: AugmentConfig | None = None) -> Dataset:
    """Interpolate position-wise between pairs of (shuffled) bags.

    Emits ``len(train)`` synthetic bags. One ``alpha ~ U(0, 1)`` is shared by
    all rows of a synthetic bag. ``V1`` mixes bags of one class and keeps that
    class's label; ``V2`` mixes any two bags and interpolates the labels.
    """
    config = config or AugmentConfig(kind="inter_v1" if variant == "V1" else "inter_v2")
    if variant not in ("V1", "V2"):
        raise ValueError(f"variant must be 'V1' or 'V2', got {variant!r}")
    _common_shape(train)
    N = len(train)
    hard = train.hard_labels()
    if variant == "V1":
        pools = [np.flatnonzero(hard == c) for c in range(train.C)]
        empty = [train.class_names[c] for c, p in enumerate(pools) if p.size == 0]
        if empty:
            raise ValueError(f"V1 mixup needs bags of every class; none for {empty}")
        if config.v1_class_prior == "uniform":
            class_p = np.full(train.C, 1.0 / train.C)
        else:
            class_p = np.array([p.size for p in pools], dtype=np.float64) / N
    everyone = np.arange(N)

    bags, labels = [], []
    for u in range(N):
        if variant == "V1":
            c = int(rng.choice(train.C, p=class_p))
            pool = pools[c]
        else:
            pool = everyone
        w = int(pool[rng.integers(pool.size)])
        v = _draw_partner(rng, pool, w, config.allow_self_pair)
        alpha = float(rng.uniform())
        xw = shuffle_bag(train.bags[w], rng).features
        xv = shuffle_bag(train.bags[v], rng).features
        bags.append(FeatureBag(f"mix-{u:05d}", mixup_pair(xw, xv, alpha)))
        if variant == "V1":
            labels.append(train.labels[w])
        else:
            y = mixup_pair(train.labels[w].probs, train.labels[v].probs, alpha)
            labels.append(SoftLabel(y))
    return train.replace_bags(bags, labels)


def intra_mixup(bag: FeatureBag, multilinear: bool, rng: RngStream) -> FeatureBag:
    """Replace every row by a combination of two randomly drawn rows of the same bag.

    Parents are drawn with replacement. Linear mode uses one scalar weight per
    output row, multilinear mode one weight per coordinate.
    """
    P, D = bag.features.shape
    i = rng.integers(P, size=P)
    j = rng.integers(P, size=P)
    alpha = rng.uniform(size=(P, D) if multilinear else (P, 1))
    x = bag.features
    return bag.with_features(_lerp(alpha, x[i], x[j]))


def apply_selective(train: Dataset, config: AugmentConfig, rng: RngStream) -> Dataset:
    """With probability ``beta`` swap each (shuffled) bag for its intra-mixup version."""
    if config.kind not in INTRA_KINDS:
        raise ValueError(f"selective application needs an intra kind, got {config.kind!r}")
    multilinear = config.kind == "intra_multilinear"
    out = []
    for bag in train.bags:
        bag = shuffle_bag(bag, rng)
        if rng.uniform() < config.beta:
            bag = intra_mixup(bag, multilinear, rng)
        out.append(bag)
    return train.replace_bags(out)


def random_sampling(bag: FeatureBag, q: float, rng: RngStream) -> FeatureBag:
    """Keep ``floor(q * P)`` distinct rows in random order."""
    if not 0.0 < q <= 1.0:
        raise ValueError(f"q must lie in (0, 1], got {q}")
    k = int(math.floor(q * bag.P))
    if k == 0:
        raise ValueError(f"q={q} keeps no rows of a bag with P={bag.P}")
    rows = rng.permutation(bag.P)[:k]
    return bag.with_features(bag.features[rows])


def selective_sampling(bag: FeatureBag, q: float, rng: RngStream) -> FeatureBag:
    """Random sampling with the ratio itself drawn from ``U(q, 1)``."""
    if not 0.0 < q <= 1.0:
        raise ValueError(f"q must lie in (0, 1], got {q}")
    r = float(rng.uniform(q, 1.0))
    return random_sampling(bag, r, rng)


def feature_stds(train: Dataset) -> np.ndarray:
    """Per-dimension population std over all training patches."""
    x = np.concatenate([b.features for b in train.bags], axis=0)
    return x.std(axis=0)


def gaussian_noise(bag: FeatureBag, sigma: float, dim_stds, rng: RngStream) -> FeatureBag:
    dim_stds = np.asarray(dim_stds, dtype=np.float64)
    if dim_stds.shape != (bag.D,):
        raise ValueError(f"dim_stds must have shape ({bag.D},), got {dim_stds.shape}")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    noise = rng.normal(size=bag.features.shape) * (sigma * dim_stds)
    return bag.with_features(bag.features + noise)


def augment_epoch(train: Dataset, config: AugmentConfig, rng: RngStream, dim_stds=None) -> Dataset:
    """The augmented view of the training set for one epoch.

    Every kind starts from shuffled bags; ``none`` is just that.
    """
    kind = config.kind
    if kind == "inter_v1":
        return inter_mixup(train, "V1", rng, config)
    if kind == "inter_v2":
        return inter_mixup(train, "V2", rng, config)
    if kind in INTRA_KINDS:
        return apply_selective(train, config, rng)
    if kind == "random_sampling":
        return train.replace_bags([random_sampling(b, config.q, rng) for b in train.bags])
    if kind == "selective_sampling":
        return train.replace_bags([selective_sampling(b, config.q, rng) for b in train.bags])
    if kind == "gaussian_noise":
        if dim_stds is None:
            dim_stds = feature_stds(train)
        return train.replace_bags(
            [gaussian_noise(shuffle_bag(b, rng), config.sigma, dim_stds, rng) for b in train.bags]
        )
    return train.replace_bags([shuffle_bag(b, rng) for b in train.bags])
