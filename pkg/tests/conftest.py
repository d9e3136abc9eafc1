import numpy as np
import pytest

from adata.grids import FeatureMap, SaliencyMap, normalize_saliency


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_feature_map(rng, side=4, channels=3, scale=1.0) -> FeatureMap:
    return FeatureMap(rng.normal(0, scale, size=(side, side, channels)))


def random_saliency(rng, side=4) -> SaliencyMap:
    return normalize_saliency(rng.uniform(0.05, 1.0, size=(side, side)))
