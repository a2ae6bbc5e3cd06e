"""Distance distributions of sampled patch-descriptor pairs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, RngStream

CATEGORIES = (
    "different_classes",
    "different_wsis_any",
    "same_class_diff_wsi_class0",
    "same_class_diff_wsi_class1",
    "same_wsi",
)
INTER_CATEGORIES = CATEGORIES[:4]
N_BINS = 64


class UnsatisfiableCategory(ValueError):
    pass


@dataclass
class PairSample:
    category: str
    a: np.ndarray  # n x D
    b: np.ndarray  # n x D
    wsi_a: np.ndarray
    wsi_b: np.ndarray
    class_a: np.ndarray
    class_b: np.ndarray
    patch_a: np.ndarray
    patch_b: np.ndarray

    def __len__(self) -> int:
        return self.a.shape[0]

    def __iter__(self):
        return zip(self.a, self.b)

    def distances(self) -> np.ndarray:
        return np.linalg.norm(self.a - self.b, axis=1)


def _pair_ok(category: str, wa, wb, ca, cb):
    if category == "different_classes":
        return ca != cb
    if category == "different_wsis_any":
        return wa != wb
    if category.startswith("same_class_diff_wsi_class"):
        k = int(category[-1])
        return (wa != wb) & (ca == k) & (cb == k)
    if category == "same_wsi":
        return wa == wb
    raise ValueError(f"unknown pair category {category!r}")


def check_pairs(sample: PairSample) -> bool:
    """Re-validate that every pair meets its category's constraint."""
    ok = _pair_ok(sample.category, sample.wsi_a, sample.wsi_b, sample.class_a, sample.class_b)
    if sample.category == "same_wsi":
        ok = ok & (sample.patch_a != sample.patch_b)
    return bool(np.all(ok))


def _eligible_wsis(category: str, classes: np.ndarray, sizes: np.ndarray):
    """WSI pools ``(first, second)`` a pair is drawn from, or raise when empty."""
    n = classes.size
    every = np.arange(n)
    if category == "different_classes":
        if np.unique(classes).size < 2:
            raise UnsatisfiableCategory("different_classes needs bags of at least two classes")
        return every
    if category == "different_wsis_any":
        if n < 2:
            raise UnsatisfiableCategory(f"{category} needs at least two WSIs")
        return every
    if category.startswith("same_class_diff_wsi_class"):
        k = int(category[-1])
        pool = np.flatnonzero(classes == k)
        if pool.size < 2:
            raise UnsatisfiableCategory(f"{category} needs at least two WSIs of class {k}, found {pool.size}")
        return pool
    if category == "same_wsi":
        pool = np.flatnonzero(sizes >= 2)
        if pool.size == 0:
            raise UnsatisfiableCategory("same_wsi needs a WSI with at least two patches")
        return pool
    raise ValueError(f"unknown pair category {category!r}")


def sample_pairs(dataset: Dataset, category: str, n: int, rng: RngStream, mode: str = "wsi_first") -> PairSample:
    """Draw ``n`` descriptor pairs satisfying ``category``.

    ``wsi_first`` picks an ordered WSI pair uniformly among the valid ones,
    then one patch uniformly from each. ``patch_uniform`` instead picks a
    patch pair uniformly among all valid patch pairs, so large bags weigh
    more. For ``same_wsi`` the two patch indices are always distinct.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if mode not in ("wsi_first", "patch_uniform"):
        raise ValueError(f"mode must be 'wsi_first' or 'patch_uniform', got {mode!r}")
    classes = dataset.hard_labels()
    sizes = np.array([b.P for b in dataset.bags])
    pool = _eligible_wsis(category, classes, sizes)
    g = rng.generator

    if category == "same_wsi":
        if mode == "wsi_first":
            w = pool[g.integers(pool.size, size=n)]
        else:
            weight = sizes[pool] * (sizes[pool] - 1.0)
            w = pool[g.choice(pool.size, size=n, p=weight / weight.sum())]
        wa = wb = w
        pa = g.integers(sizes[w])
        # second index uniform over the other P - 1 rows
        pb = g.integers(sizes[w] - 1)
        pb = pb + (pb >= pa)
    else:
        if mode == "wsi_first":
            weight = np.ones(pool.size)
        else:
            weight = sizes[pool].astype(np.float64)
        p = weight / weight.sum()
        wa = np.empty(0, dtype=np.int64)
        wb = np.empty(0, dtype=np.int64)
        # rejection sampling from the pool's product space; valid pairs stay uniform
        while wa.size < n:
            k = max(2 * (n - wa.size), 64)
            ca_ = pool[g.choice(pool.size, size=k, p=p)]
            cb_ = pool[g.choice(pool.size, size=k, p=p)]
            keep = _pair_ok(category, ca_, cb_, classes[ca_], classes[cb_])
            wa = np.concatenate([wa, ca_[keep]])
            wb = np.concatenate([wb, cb_[keep]])
        wa, wb = wa[:n], wb[:n]
        pa = g.integers(sizes[wa])
        pb = g.integers(sizes[wb])

    feats = [b.features for b in dataset.bags]
    a = np.stack([feats[w][i] for w, i in zip(wa, pa)])
    b = np.stack([feats[w][i] for w, i in zip(wb, pb)])
    return PairSample(category, a, b, wa, wb, classes[wa], classes[wb], pa, pb)


@dataclass
class DistanceSummary:
    category: str
    n_pairs: int
    mean: float
    median: float
    quartiles: tuple[float, float]
    whiskers: tuple[float, float]
    histogram: np.ndarray  # N_BINS counts over [0, max]
    bin_edges: np.ndarray
    std: float

    @property
    def sem(self) -> float:
        return self.std / np.sqrt(self.n_pairs)


def summarize_distances(d, category: str = "") -> DistanceSummary:
    d = np.asarray(d, dtype=np.float64)
    if d.size == 0:
        raise ValueError("no distances to summarize")
    q1, med, q3 = np.percentile(d, [25, 50, 75])
    iqr = q3 - q1
    # box-plot whiskers reach the most extreme data inside 1.5 IQR of the box
    lo = float(d[d >= q1 - 1.5 * iqr].min())
    hi = float(d[d <= q3 + 1.5 * iqr].max())
    edges = np.linspace(0.0, float(d.max()), N_BINS + 1)
    if not np.all(np.diff(edges) > 0):
        # zero or subnormal spread: no finite bins to resolve
        edges = np.linspace(0.0, 1.0, N_BINS + 1)
    counts, edges = np.histogram(d, bins=edges)
    return DistanceSummary(
        category=category,
        n_pairs=int(d.size),
        mean=float(d.mean()),
        median=float(med),
        quartiles=(float(q1), float(q3)),
        whiskers=(lo, hi),
        histogram=counts,
        bin_edges=edges,
        std=float(d.std(ddof=1)) if d.size > 1 else 0.0,
    )


def distance_summary(pairs) -> DistanceSummary:
    if isinstance(pairs, PairSample):
        return summarize_distances(pairs.distances(), pairs.category)
    pairs = list(pairs)
    if not pairs:
        raise ValueError("empty pair list")
    a = np.array([p[0] for p in pairs], dtype=np.float64)
    b = np.array([p[1] for p in pairs], dtype=np.float64)
    return summarize_distances(np.linalg.norm(a - b, axis=1))


def analyze(dataset: Dataset, n: int, rng: RngStream, mode: str = "wsi_first", categories=CATEGORIES):
    """Summaries for every category; unsatisfiable ones map to their error message.

    Each category draws from its own child stream of ``rng``.
    """
    out = {}
    for idx, cat in enumerate(categories):
        try:
            pairs = sample_pairs(dataset, cat, n, rng.child(idx), mode)
        except UnsatisfiableCategory as exc:
            out[cat] = str(exc)
            continue
        out[cat] = distance_summary(pairs)
    return out


SUMMARY_COLUMNS = ("category", "n", "mean", "median", "q1", "q3", "whisker_lo", "whisker_hi", "error")


def summary_rows_csv(results: dict) -> str:
    lines = [",".join(SUMMARY_COLUMNS)]
    for cat, s in results.items():
        if isinstance(s, DistanceSummary):
            vals = [cat, str(s.n_pairs)] + [repr(v) for v in (s.mean, s.median, *s.quartiles, *s.whiskers)] + [""]
        else:
            msg = '"' + str(s).replace('"', '""') + '"'
            vals = [cat, "", "", "", "", "", "", "", msg]
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"
