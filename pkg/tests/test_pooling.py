import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adata.errors import DimensionMismatch, NonDivisible
from adata.grids import FeatureMap, SaliencyMap, normalize_saliency
from adata.pooling import build_kernel, pool_features, pool_saliency

from conftest import random_feature_map, random_saliency


class TestBuildKernel:
    def test_identity_limit(self):
        k = build_kernel(4, 1)
        assert np.array_equal(k.matrix, np.eye(4))

    def test_16_by_4(self):
        k = build_kernel(16, 4)
        assert k.matrix.shape == (16, 4)
        nonzero = k.matrix[k.matrix != 0]
        assert np.all(nonzero == 0.25)
        assert np.allclose(k.matrix.sum(axis=0), 1.0)

    def test_4_by_2_layout(self):
        # expected kernel written out by hand
        expected = np.array(
            [[0.5, 0.0], [0.5, 0.0], [0.0, 0.5], [0.0, 0.5]]
        )
        assert np.array_equal(build_kernel(4, 2).matrix, expected)

    def test_non_divisible(self):
        with pytest.raises(NonDivisible):
            build_kernel(5, 2)

    @given(side=st.sampled_from([4, 8, 16]), factor=st.sampled_from([1, 2, 4]))
    @settings(max_examples=20, deadline=None)
    def test_columns_sum_to_one(self, side, factor):
        k = build_kernel(side, factor)
        assert np.max(np.abs(k.matrix.sum(axis=0) - 1.0)) <= 1e-12


class TestPoolFeatures:
    def test_identity_exact(self, rng):
        fm = random_feature_map(rng, side=4, channels=3)
        out = pool_features(fm, build_kernel(4, 1))
        assert np.array_equal(out.values, fm.values)

    def test_constant_fixed_point(self):
        fm = FeatureMap(np.full((8, 8, 2), 3.7))
        out = pool_features(fm, build_kernel(8, 4))
        assert np.max(np.abs(out.values - 3.7)) <= 1e-9

    def test_block_means(self):
        # oracle: the four 2x2 block means of values 0..15 are 2.5/4.5/10.5/12.5
        fm = FeatureMap(np.arange(16.0).reshape(4, 4, 1))
        out = pool_features(fm, build_kernel(4, 2))
        assert np.allclose(out.values[:, :, 0], [[2.5, 4.5], [10.5, 12.5]])

    def test_side_mismatch(self, rng):
        with pytest.raises(DimensionMismatch):
            pool_features(random_feature_map(rng, side=4), build_kernel(8, 2))

    def test_channel_permutation_commutes(self, rng):
        fm = random_feature_map(rng, side=4, channels=4)
        k = build_kernel(4, 2)
        perm = [2, 0, 3, 1]
        left = pool_features(FeatureMap(fm.values[:, :, perm]), k).values
        right = pool_features(fm, k).values[:, :, perm]
        assert np.array_equal(left, right)

    def test_composition(self, rng):
        fm = random_feature_map(rng, side=8, channels=3)
        two_steps = pool_features(
            pool_features(fm, build_kernel(8, 2)), build_kernel(4, 2)
        )
        one_step = pool_features(fm, build_kernel(8, 4))
        assert np.max(np.abs(two_steps.values - one_step.values)) <= 1e-9


class TestPoolSaliency:
    def test_identity_exact(self, rng):
        sal = random_saliency(rng, side=4)
        out = pool_saliency(sal, build_kernel(4, 1))
        assert np.array_equal(out.values, sal.values)

    def test_uniform_stays_uniform(self):
        sal = SaliencyMap(np.full((4, 4), 1 / 16))
        out = pool_saliency(sal, build_kernel(4, 2))
        assert np.allclose(out.values, 0.25)

    def test_concentrated_mass(self):
        raw = np.zeros((4, 4))
        raw[:2, :2] = 1.0
        out = pool_saliency(normalize_saliency(raw), build_kernel(4, 2))
        assert np.allclose(out.values, [[1.0, 0.0], [0.0, 0.0]])

    def test_unit_mass_after_pooling(self, rng):
        out = pool_saliency(random_saliency(rng, side=8), build_kernel(8, 4))
        assert abs(float(out.values.sum()) - 1.0) <= 1e-9

    @given(seed=st.integers(0, 200), factor=st.sampled_from([2, 4]))
    @settings(max_examples=60, deadline=None)
    def test_argmax_block_preserved(self, seed, factor):
        rng = np.random.default_rng(seed)
        side = 8
        sal = normalize_saliency(rng.uniform(0, 1, size=(side, side)))
        pooled = pool_saliency(sal, build_kernel(side, factor))
        out_side = side // factor
        block_mass = sal.values.reshape(out_side, factor, out_side, factor).sum(axis=(1, 3))
        assert np.argmax(pooled.values) == np.argmax(block_mass)
