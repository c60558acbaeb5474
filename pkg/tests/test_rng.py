"""Counter-based generator: determinism, distribution, and stream hygiene."""

import numpy as np
import pytest
from scipy import stats

from csbp import _rng


def test_raw_words_deterministic():
    keys = _rng.derive_key(123, np.arange(8))
    a = _rng.raw_words(keys, _rng.pack(5, 2))
    b = _rng.raw_words(keys, _rng.pack(5, 2))
    assert a.dtype == np.uint64
    assert np.array_equal(a, b)


def test_raw_words_distinct_across_slots_and_steps():
    keys = _rng.derive_key(123, np.arange(64))
    base = _rng.raw_words(keys, _rng.pack(0, 0))
    assert not np.array_equal(base, _rng.raw_words(keys, _rng.pack(0, 1)))
    assert not np.array_equal(base, _rng.raw_words(keys, _rng.pack(1, 0)))


def test_derive_key_scalar_matches_array():
    ks = _rng.derive_key(7, 3)
    ka = _rng.derive_key(7, np.array([2, 3, 4]))
    assert ks == ka[1]
    assert len(set(int(k) for k in ka)) == 3


def test_uniforms_in_open_interval():
    keys = _rng.derive_key(0, np.arange(100_000))
    u = _rng.uniforms(keys, _rng.pack(0, 0))
    assert u.min() > 0.0
    assert u.max() < 1.0
    # mean of U(0,1) is 1/2 with sd 1/sqrt(12 N)
    z = (u.mean() - 0.5) / np.sqrt(1.0 / 12.0 / len(u))
    assert abs(z) < 5.0


def test_normals_moments():
    keys = _rng.derive_key(42, np.arange(200_000))
    z = _rng.normals(keys, _rng.pack(0, 0))
    n = len(z)
    assert abs(z.mean()) < 5.0 / np.sqrt(n)
    assert abs(z.std() - 1.0) < 5.0 / np.sqrt(2 * n)
    assert abs(stats.skew(z)) < 5.0 * np.sqrt(6.0 / n)


def test_exponentials_mean():
    keys = _rng.derive_key(9, np.arange(100_000))
    e = _rng.exponentials(keys, _rng.pack(0, 0))
    assert e.min() > 0.0
    z = (e.mean() - 1.0) / (1.0 / np.sqrt(len(e)))
    assert abs(z) < 5.0


@pytest.mark.parametrize("lam", [0.5, 3.0, 9.5, 15.0, 80.0, 300.0])
def test_poisson_matches_scipy_pmf(lam):
    """Chi-squared goodness of fit against the exact pmf, both regimes."""
    n = 100_000
    keys = _rng.derive_key(1000 + int(lam * 10), np.arange(n))
    draws = _rng.poisson(np.full(n, lam), keys, 0, 0)
    assert draws.min() >= 0
    lo = max(0, int(lam - 5 * np.sqrt(lam)))
    hi = int(lam + 5 * np.sqrt(lam)) + 2
    inner = (draws >= lo) & (draws < hi)
    counts = np.concatenate(
        [
            [(draws < lo).sum()],
            np.bincount(draws[inner] - lo, minlength=hi - lo),
            [(draws >= hi).sum()],
        ]
    ).astype(float)
    probs = np.concatenate(
        [
            [stats.poisson.cdf(lo - 1, lam)],
            stats.poisson.pmf(np.arange(lo, hi), lam),
            [stats.poisson.sf(hi - 1, lam)],
        ]
    )
    keep = probs * n >= 5.0
    chi2 = float(((counts[keep] - n * probs[keep]) ** 2 / (n * probs[keep])).sum())
    dof = max(int(keep.sum()) - 1, 1)
    assert stats.chi2.sf(chi2, dof) > 1e-6


def test_poisson_zero_rate():
    keys = _rng.derive_key(5, np.arange(1000))
    draws = _rng.poisson(np.zeros(1000), keys, 3, 0)
    assert np.all(draws == 0)


def test_poisson_mixed_rates_vectorized():
    """Small and large rates in one call agree with separate calls."""
    lam = np.array([0.5, 50.0, 2.0, 200.0])
    keys = _rng.derive_key(77, np.arange(4))
    together = _rng.poisson(lam, keys, 1, 4)
    for i in range(4):
        alone = _rng.poisson(lam[i : i + 1], keys[i : i + 1], 1, 4)
        assert together[i] == alone[0]


def test_pack_disjoint():
    assert _rng.pack(0, 1) != _rng.pack(1, 0)
    assert _rng.pack(2, 3) != _rng.pack(3, 2)
