"""Domain types, seeded random streams and split bookkeeping."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

# stream ids, one per concern, so toggling one source of randomness never
# shifts the draws of another
SPLIT = 0
INIT = 1
AUGMENT = 2
SHUFFLE = 3
ANALYSIS = 4

_U64 = (1 << 64) - 1


class RngStream:
    """Deterministic random stream keyed by ``(seed, stream_id)``.

    Backed by numpy's Philox counter-based bit generator. The key is derived
    through ``SeedSequence(seed, spawn_key=(stream_id, *path))`` so child
    streams are reproducible from the root seed alone.
    """

    def __init__(self, seed: int, stream_id: int = 0, path: tuple[int, ...] = ()):
        seed = int(seed)
        stream_id = int(stream_id)
        if not 0 <= seed <= _U64 or not 0 <= stream_id <= _U64:
            raise ValueError("seed and stream_id must be 64-bit unsigned integers")
        self.seed = seed
        self.stream_id = stream_id
        self.path = tuple(int(p) for p in path)
        ss = np.random.SeedSequence(seed, spawn_key=(stream_id, *self.path))
        self.generator = np.random.Generator(np.random.Philox(ss))

    def child(self, *keys: int) -> "RngStream":
        """Fresh stream for a sub-task; independent of how much of ``self`` was consumed."""
        return RngStream(self.seed, self.stream_id, self.path + tuple(keys))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, path={self.path})"

    # thin wrappers so call sites read like the math
    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def choice(self, a, size=None, replace=True, p=None):
        return self.generator.choice(a, size=size, replace=replace, p=p)

    def random(self, size=None):
        return self.generator.random(size)


@dataclass(frozen=True, eq=False)
class FeatureBag:
    """One WSI: ``P`` patch descriptors of dimension ``D``, stored as float64."""

    id: str
    features: np.ndarray

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64, copy=True)
        if x.ndim != 2:
            raise ValueError(f"bag {self.id!r}: features must be a 2-d matrix, got ndim={x.ndim}")
        if x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError(f"bag {self.id!r}: need P >= 1 and D >= 1, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"bag {self.id!r}: features contain non-finite values")
        x.setflags(write=False)
        object.__setattr__(self, "features", x)

    @property
    def P(self) -> int:
        return self.features.shape[0]

    @property
    def D(self) -> int:
        return self.features.shape[1]

    def with_features(self, features: np.ndarray) -> "FeatureBag":
        return FeatureBag(self.id, features)

    def __eq__(self, other):
        if not isinstance(other, FeatureBag):
            return NotImplemented
        return self.id == other.id and np.array_equal(self.features, other.features)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SoftLabel:
    """Probability vector over classes; one-hot and interpolated labels alike."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64, copy=True)
        if p.ndim != 1 or p.size < 1:
            raise ValueError("label must be a non-empty vector")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError(f"label entries must be finite and non-negative: {p}")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"label entries must sum to 1, got {p.sum()!r}")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def C(self) -> int:
        return self.probs.size

    @property
    def hard(self) -> int:
        return int(np.argmax(self.probs))

    def __eq__(self, other):
        if not isinstance(other, SoftLabel):
            return NotImplemented
        return np.array_equal(self.probs, other.probs)

    __hash__ = None


def one_hot(class_index: int, C: int) -> SoftLabel:
    if not 0 <= class_index < C:
        raise ValueError(f"class index {class_index} out of range for C={C}")
    p = np.zeros(C)
    p[class_index] = 1.0
    return SoftLabel(p)


@dataclass(frozen=True)
class Dataset:
    bags: tuple[FeatureBag, ...]
    labels: tuple[SoftLabel, ...]
    class_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "bags", tuple(self.bags))
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if len(self.bags) != len(self.labels):
            raise ValueError(f"{len(self.bags)} bags but {len(self.labels)} labels")
        if len(self.bags) < 2:
            raise ValueError("a dataset needs at least 2 bags")
        dims = {b.D for b in self.bags}
        if len(dims) != 1:
            raise ValueError(f"all bags must share one descriptor dimension, got {sorted(dims)}")
        C = len(self.class_names)
        for lab in self.labels:
            if lab.C != C:
                raise ValueError(f"label has {lab.C} entries but dataset has {C} classes")

    def __len__(self) -> int:
        return len(self.bags)

    @property
    def D(self) -> int:
        return self.bags[0].D

    @property
    def C(self) -> int:
        return len(self.class_names)

    def hard_labels(self) -> np.ndarray:
        return np.array([lab.hard for lab in self.labels], dtype=np.int64)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = [int(i) for i in indices]
        return Dataset(
            tuple(self.bags[i] for i in idx),
            tuple(self.labels[i] for i in idx),
            self.class_names,
        )

    def replace_bags(self, bags: Sequence[FeatureBag], labels: Sequence[SoftLabel] | None = None) -> "Dataset":
        return Dataset(tuple(bags), tuple(self.labels if labels is None else labels), self.class_names)


@dataclass(frozen=True)
class SplitPlan:
    train_indices: tuple[int, ...]
    test_indices: tuple[int, ...]
    repetition: int
    seed: int

    def __post_init__(self):
        if set(self.train_indices) & set(self.test_indices):
            raise ValueError("train and test indices overlap")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _stratified_train_counts(class_sizes: list[int], n_train: int, train_fraction: float) -> list[int]:
    # largest-remainder apportionment so the per-class counts add up to n_train
    quotas = [n * train_fraction for n in class_sizes]
    counts = [int(math.floor(q)) for q in quotas]
    order = sorted(range(len(quotas)), key=lambda c: (-(quotas[c] - counts[c]), c))
    short = n_train - sum(counts)
    for c in order:
        if short <= 0:
            break
        if counts[c] < class_sizes[c]:
            counts[c] += 1
            short -= 1
    return counts


def make_splits(
    dataset: Dataset | int,
    repetitions: int,
    train_fraction: float = 0.8,
    seed: int = 0,
    stratified: bool = True,
) -> list[SplitPlan]:
    """Repeated random train/test splits, deterministic in ``seed``.

    ``dataset`` may also be a plain bag count, which implies unstratified
    splitting. Each repetition draws from its own child stream, so plan ``r``
    does not depend on how many plans were requested.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    if repetitions < 1:
        raise ValueError(f"repetitions must be >= 1, got {repetitions}")
    if isinstance(dataset, Dataset):
        N = len(dataset)
        classes = dataset.hard_labels()
    else:
        N = int(dataset)
        classes = None
        stratified = False
    n_train = _round_half_up(train_fraction * N)
    if n_train < 1 or n_train >= N:
        raise ValueError(f"split of {N} bags at fraction {train_fraction} leaves one side empty")

    root = RngStream(seed, SPLIT)
    plans = []
    for r in range(repetitions):
        rng = root.child(r)
        if stratified:
            members = [np.flatnonzero(classes == c) for c in range(int(classes.max()) + 1)]
            members = [m for m in members if m.size]
            counts = _stratified_train_counts([m.size for m in members], n_train, train_fraction)
            train, test = [], []
            for m, k in zip(members, counts):
                perm = m[rng.permutation(m.size)]
                train.extend(perm[:k].tolist())
                test.extend(perm[k:].tolist())
        else:
            perm = rng.permutation(N)
            train, test = perm[:n_train].tolist(), perm[n_train:].tolist()
        plans.append(SplitPlan(tuple(sorted(train)), tuple(sorted(test)), r, int(seed)))
    return plans


def shuffle_bag(bag: FeatureBag, rng: RngStream) -> FeatureBag:
    """Uniformly random row permutation; id preserved."""
    return FeatureBag(bag.id, bag.features[rng.permutation(bag.P)])
