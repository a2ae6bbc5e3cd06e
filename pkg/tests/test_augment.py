import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from milmix.augment import (
    AugmentConfig,
    apply_selective,
    augment_epoch,
    feature_stds,
    gaussian_noise,
    inter_mixup,
    intra_mixup,
    mixup_pair,
    random_sampling,
    selective_sampling,
)
from milmix.core import Dataset, FeatureBag, RngStream, one_hot

from conftest import make_dataset


def sorted_rows(x):
    return x[np.lexsort(x.T[::-1])]


def binomial_interval(n, p, coverage):
    """Central interval [lo, hi] of Binomial(n, p) with at least ``coverage`` mass, by exact summation."""
    pmf = [math.comb(n, k) * p**k * (1 - p) ** (n - k) for k in range(n + 1)]
    tail = (1 - coverage) / 2
    lo, acc = 0, 0.0
    while acc + pmf[lo] <= tail:
        acc += pmf[lo]
        lo += 1
    hi, acc = n, 0.0
    while acc + pmf[hi] <= tail:
        acc += pmf[hi]
        hi -= 1
    return lo, hi


class TestMixupPair:
    def test_identities(self):
        xi, xj = np.array([0.1, -3.7, 2e5]), np.array([9.0, 0.3, -1e-3])
        np.testing.assert_array_equal(mixup_pair(xi, xj, 1.0), xi)
        np.testing.assert_array_equal(mixup_pair(xi, xj, 0.0), xj)

    def test_midpoint(self):
        np.testing.assert_array_equal(mixup_pair([2, 4], [4, 8], 0.5), [3, 6])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            mixup_pair([1, 2], [1, 2, 3], 0.5)

    def test_alpha_range(self):
        with pytest.raises(ValueError):
            mixup_pair([1.0], [2.0], 1.5)

    @settings(max_examples=200, deadline=None)
    @given(
        x=arrays(np.float64, (2, 7), elements=st.floats(-1e8, 1e8)),
        alpha=st.floats(0.0, 1.0),
    )
    def test_convex_hull_exact(self, x, alpha):
        out = mixup_pair(x[0], x[1], alpha)
        assert np.all(out >= np.minimum(x[0], x[1])) and np.all(out <= np.maximum(x[0], x[1]))

    def test_equal_parents_exact(self):
        c = np.array([0.1, 0.7, 1 / 3])
        for a in np.linspace(0, 1, 101):
            np.testing.assert_array_equal(mixup_pair(c, c, a), c)


class TestInterMixup:
    def test_count_and_labels_v1(self, small_dataset):
        out = inter_mixup(small_dataset, "V1", RngStream(0))
        assert len(out) == len(small_dataset)
        for lab in out.labels:
            assert lab.probs.tolist() in ([1.0, 0.0], [0.0, 1.0])

    def test_v1_identical_class_bags(self):
        a, b = np.full((4, 3), 2.0), np.full((4, 3), -1.0)
        bags = [FeatureBag(f"a{i}", a) for i in range(3)] + [FeatureBag(f"b{i}", b) for i in range(3)]
        ds = Dataset(bags, [one_hot(0, 2)] * 3 + [one_hot(1, 2)] * 3, ("x", "y"))
        out = inter_mixup(ds, "V1", RngStream(1))
        for bag, lab in zip(out.bags, out.labels):
            np.testing.assert_array_equal(bag.features, a if lab.hard == 0 else b)

    def test_v1_mixes_within_class_only(self):
        # class 0 lives at x < 0, class 1 at x > 10; mixes never cross the gap
        rng = np.random.default_rng(0)
        bags = [FeatureBag(f"a{i}", rng.uniform(-2, -1, (5, 2))) for i in range(4)]
        bags += [FeatureBag(f"b{i}", rng.uniform(11, 12, (5, 2))) for i in range(4)]
        ds = Dataset(bags, [one_hot(0, 2)] * 4 + [one_hot(1, 2)] * 4, ("x", "y"))
        for seed in range(20):
            out = inter_mixup(ds, "V1", RngStream(seed))
            for bag, lab in zip(out.bags, out.labels):
                assert np.all(bag.features < 0) if lab.hard == 0 else np.all(bag.features > 10)

    def test_v2_label_formula(self):
        # two single-row bags at 0 and 1: the mixed row is alpha itself
        ds = Dataset(
            (FeatureBag("w", [[1.0]]), FeatureBag("v", [[0.0]])),
            (one_hot(0, 2), one_hot(1, 2)),
            ("a", "b"),
        )
        out = inter_mixup(ds, "V2", RngStream(3), AugmentConfig(kind="inter_v2", allow_self_pair=False))
        for bag, lab in zip(out.bags, out.labels):
            x = bag.features[0, 0]
            # whichever bag is w, the mixed row equals the class-0 label weight
            assert lab.probs[0] == pytest.approx(x, abs=1e-15)
            assert lab.probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_v2_label_example(self):
        y = mixup_pair([1.0, 0.0], [0.0, 1.0], 0.7)
        np.testing.assert_allclose(y, [0.7, 0.3], atol=1e-15)

    def test_v2_labels_on_simplex(self, small_dataset):
        for seed in range(10):
            out = inter_mixup(small_dataset, "V2", RngStream(seed))
            for lab in out.labels:
                assert np.all(lab.probs >= 0) and abs(lab.probs.sum() - 1) <= 1e-9

    def test_v1_needs_every_class(self):
        ds = Dataset(
            (FeatureBag("a", np.zeros((2, 2))), FeatureBag("b", np.ones((2, 2)))),
            (one_hot(0, 2), one_hot(0, 2)),
            ("x", "y"),
        )
        with pytest.raises(ValueError, match="every class"):
            inter_mixup(ds, "V1", RngStream(0))

    def test_needs_common_shape(self):
        with pytest.raises(ValueError, match="common shape"):
            inter_mixup(make_dataset(P=6, same_P=False, seed=3), "V2", RngStream(0))

    def test_no_self_pair_flag(self):
        ds = Dataset(
            (FeatureBag("a", [[0.0]]), FeatureBag("b", [[1.0]])),
            (one_hot(0, 2), one_hot(0, 2)),
            ("x", "y"),
        )
        cfg = AugmentConfig(kind="inter_v2", allow_self_pair=False)
        out = inter_mixup(ds, "V2", RngStream(0), cfg)
        # partners always differ, so no output is exactly a source row unless alpha hit 0 or 1
        assert all(0.0 < b.features[0, 0] < 1.0 for b in out.bags)

    def test_empirical_prior(self):
        ds = make_dataset(n_per_class=3)
        cfg = AugmentConfig(kind="inter_v1", v1_class_prior="empirical")
        assert len(inter_mixup(ds, "V1", RngStream(0), cfg)) == len(ds)

    def test_deterministic(self, small_dataset):
        a = inter_mixup(small_dataset, "V2", RngStream(5, 2))
        b = inter_mixup(small_dataset, "V2", RngStream(5, 2))
        assert a.bags == b.bags and a.labels == b.labels


class TestIntraMixup:
    @pytest.mark.parametrize("multilinear", [False, True])
    def test_constant_bag(self, multilinear):
        c = np.array([0.3, -1.1, 7.0])
        bag = FeatureBag("c", np.tile(c, (9, 1)))
        out = intra_mixup(bag, multilinear, RngStream(0))
        np.testing.assert_array_equal(out.features, bag.features)

    @pytest.mark.parametrize("multilinear", [False, True])
    def test_row_count_and_hull(self, multilinear):
        x = np.random.default_rng(1).normal(size=(11, 4))
        out = intra_mixup(FeatureBag("b", x), multilinear, RngStream(2)).features
        assert out.shape == x.shape
        assert np.all(out >= x.min(axis=0)) and np.all(out <= x.max(axis=0))

    def test_linear_rows_on_parent_segment(self):
        # linear mode: each output row is one scalar mix of two parent rows
        x = np.random.default_rng(3).normal(size=(6, 5))
        out = intra_mixup(FeatureBag("b", x), False, RngStream(4)).features
        for row in out:
            found = False
            for i in range(6):
                for j in range(6):
                    d = x[i] - x[j]
                    if not np.any(d):
                        found |= np.allclose(row, x[j])
                        continue
                    a = np.dot(row - x[j], d) / np.dot(d, d)
                    if -1e-12 <= a <= 1 + 1e-12 and np.allclose(row, x[j] + a * d, atol=1e-12):
                        found = True
            assert found

    def test_multilinear_uses_per_coordinate_weights(self):
        x = np.array([[0.0, 0.0], [1.0, 1.0]])
        out = intra_mixup(FeatureBag("b", np.tile(x, (50, 1))), True, RngStream(0)).features
        mixed = out[(out > 0).all(axis=1) & (out < 1).all(axis=1)]
        assert np.any(np.abs(mixed[:, 0] - mixed[:, 1]) > 1e-3)

    def test_scalar_dimension_distribution_matches(self):
        # D=1: both modes draw one weight per row; compare the output distributions
        x = np.linspace(0.0, 1.0, 8)[:, None]
        bag = FeatureBag("b", np.tile(x, (250, 1)))
        lin = intra_mixup(bag, False, RngStream(1)).features.ravel()
        mul = intra_mixup(bag, True, RngStream(2)).features.ravel()
        # two-sample KS statistic well below the 0.1% critical value
        grid = np.sort(np.concatenate([lin, mul]))
        ks = np.max(np.abs(np.searchsorted(np.sort(lin), grid, "right") - np.searchsorted(np.sort(mul), grid, "right"))) / lin.size
        n = lin.size
        assert ks < 1.95 * math.sqrt(2.0 / n)


class TestApplySelective:
    def test_beta_zero_keeps_rows(self, small_dataset):
        out = apply_selective(small_dataset, AugmentConfig(kind="intra_linear", beta=0.0), RngStream(0))
        for a, b in zip(small_dataset.bags, out.bags):
            np.testing.assert_array_equal(sorted_rows(a.features), sorted_rows(b.features))
        assert out.labels == small_dataset.labels

    def test_beta_one_augments_all(self):
        ds = make_dataset(n_per_class=10, P=20, D=4)
        out = apply_selective(ds, AugmentConfig(kind="intra_multilinear", beta=1.0), RngStream(0))
        for a, b in zip(ds.bags, out.bags):
            assert not np.array_equal(sorted_rows(a.features), sorted_rows(b.features))

    def test_replaced_fraction(self):
        lo, hi = binomial_interval(1000, 0.5, 0.999)
        assert 0.44 <= lo / 1000 and hi / 1000 <= 0.56
        ds = make_dataset(n_per_class=500, P=8, D=3)
        out = apply_selective(ds, AugmentConfig(kind="intra_multilinear", beta=0.5), RngStream(0))
        replaced = sum(
            not np.array_equal(sorted_rows(a.features), sorted_rows(b.features)) for a, b in zip(ds.bags, out.bags)
        )
        assert lo <= replaced <= hi

    def test_rejects_non_intra(self, small_dataset):
        with pytest.raises(ValueError):
            apply_selective(small_dataset, AugmentConfig(kind="inter_v1"), RngStream(0))


class TestSampling:
    def test_full_ratio_is_permutation(self):
        x = np.arange(30.0).reshape(10, 3)
        out = random_sampling(FeatureBag("b", x), 1.0, RngStream(0)).features
        np.testing.assert_array_equal(sorted_rows(out), x)

    def test_half_ratio(self):
        bag = FeatureBag("b", np.random.default_rng(0).normal(size=(1024, 2)))
        assert random_sampling(bag, 0.5, RngStream(0)).P == 512

    def test_sub_multiset(self):
        x = np.arange(40.0).reshape(20, 2)
        out = random_sampling(FeatureBag("b", x), 0.35, RngStream(1)).features
        assert out.shape == (7, 2)
        rows = {tuple(r) for r in x}
        assert all(tuple(r) in rows for r in out) and len({tuple(r) for r in out}) == 7

    def test_zero_rows_rejected(self):
        with pytest.raises(ValueError):
            random_sampling(FeatureBag("b", np.zeros((3, 1))), 0.2, RngStream(0))

    def test_selective_full(self):
        x = np.arange(12.0).reshape(6, 2)
        for s in range(5):
            out = selective_sampling(FeatureBag("b", x), 1.0, RngStream(s)).features
            np.testing.assert_array_equal(sorted_rows(out), x)

    def test_selective_range(self):
        bag = FeatureBag("b", np.zeros((1024, 1)))
        counts = [selective_sampling(bag, 0.5, RngStream(s)).P for s in range(200)]
        assert min(counts) >= 512 and max(counts) <= 1024

    def test_selective_count_varies(self):
        # draws are U(0.5, 1) * 1024 floored: 512 equally likely counts, so the
        # chance that 100 draws all coincide is 512 * (1/512)**100
        bound = 512 * (1 / 512) ** 100
        assert bound < 1e-250
        bag = FeatureBag("b", np.zeros((1024, 1)))
        r = RngStream(0)
        counts = {selective_sampling(bag, 0.5, r).P for _ in range(100)}
        assert len(counts) > 1


class TestGaussianNoise:
    def test_sigma_zero(self):
        bag = FeatureBag("b", np.random.default_rng(0).normal(size=(5, 3)))
        out = gaussian_noise(bag, 0.0, np.ones(3), RngStream(0))
        np.testing.assert_array_equal(out.features, bag.features)

    def test_zero_std_dimension_untouched(self):
        bag = FeatureBag("b", np.random.default_rng(0).normal(size=(5, 3)))
        out = gaussian_noise(bag, 2.0, np.array([1.0, 0.0, 3.0]), RngStream(0))
        np.testing.assert_array_equal(out.features[:, 1], bag.features[:, 1])
        assert not np.array_equal(out.features[:, 0], bag.features[:, 0])

    def test_noise_scale(self):
        # relative standard error of a sample std at n=1e5 is ~1/sqrt(2n) = 0.22%,
        # so 5% is a >20-sigma margin
        stds = np.array([0.5, 2.0, 10.0])
        sigma = 0.3
        bag = FeatureBag("b", np.zeros((100_000, 3)))
        noise = gaussian_noise(bag, sigma, stds, RngStream(7)).features
        np.testing.assert_allclose(noise.std(axis=0), sigma * stds, rtol=0.05)

    def test_feature_stds_population(self):
        ds = make_dataset(n_per_class=3, P=4, D=2)
        x = np.concatenate([b.features for b in ds.bags])
        np.testing.assert_allclose(feature_stds(ds), x.std(axis=0))


class TestAugmentEpoch:
    @pytest.mark.parametrize(
        "cfg",
        [
            AugmentConfig(),
            AugmentConfig(kind="inter_v1"),
            AugmentConfig(kind="inter_v2"),
            AugmentConfig(kind="intra_linear", beta=0.5),
            AugmentConfig(kind="intra_multilinear"),
            AugmentConfig(kind="random_sampling", q=0.5),
            AugmentConfig(kind="selective_sampling", q=0.5),
            AugmentConfig(kind="gaussian_noise", sigma=0.2),
        ],
        ids=lambda c: c.label,
    )
    def test_every_kind(self, small_dataset, cfg):
        out = augment_epoch(small_dataset, cfg, RngStream(0))
        assert len(out) == len(small_dataset)
        assert all(np.all(np.isfinite(b.features)) for b in out.bags)
        again = augment_epoch(small_dataset, cfg, RngStream(0))
        assert out.bags == again.bags

    def test_none_is_shuffle(self, small_dataset):
        out = augment_epoch(small_dataset, AugmentConfig(), RngStream(0))
        for a, b in zip(small_dataset.bags, out.bags):
            np.testing.assert_array_equal(sorted_rows(a.features), sorted_rows(b.features))


class TestAugmentConfig:
    @pytest.mark.parametrize(
        "kw", [{"kind": "rotate"}, {"beta": 1.2}, {"q": 0.0}, {"sigma": -1.0}, {"v1_class_prior": "x"}]
    )
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            AugmentConfig(**kw)

    def test_labels(self):
        assert AugmentConfig(kind="intra_multilinear", beta=0.25).label == "intra_multilinear(beta=0.25)"
        assert AugmentConfig(kind="inter_v2", beta=0.3).label == "inter_v2"
