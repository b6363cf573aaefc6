import numpy as np
import pytest

from digitvec.hmm import FlatGmm
from digitvec.stats import BaumWelchStats


def make_flat(digit=0, n_comps=2, dim=3, seed=0):
    rng = np.random.default_rng(seed)
    weights = rng.uniform(0.5, 1.5, n_comps)
    weights /= weights.sum()
    means = rng.standard_normal((n_comps, dim))
    variances = rng.uniform(0.5, 1.5, (n_comps, dim))
    return FlatGmm(digit, weights, means, variances)


def make_stats(flat, rng, digit=None, count_scale=3.0):
    n = rng.uniform(0.5, count_scale, flat.num_components)
    f = rng.standard_normal((flat.num_components, flat.dim))
    return BaumWelchStats(flat.digit if digit is None else digit, n, f)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
