"""Spine chain: construction identities, trajectory laws, stationarity."""

import numpy as np
import pytest
from scipy.linalg import expm

from csbp import (
    drift_matrix,
    many_to_one_gap,
    occupation_fractions,
    perron_frobenius,
    simulate_spine,
    spine_generator,
    stationary_check,
)
from csbp import _rng
from csbp.spine import _states_at
from conftest import reference_model


@pytest.fixture(scope="module")
def gen():
    cfg = reference_model()
    spec = perron_frobenius(drift_matrix(cfg))
    return cfg, spec, spine_generator(cfg, spec)


def test_holding_rates_closed_form(gen):
    cfg, spec, sg = gen
    # (A h)_i = Lambda h_i forces sum_j eta_ij h_j / h_i = Lambda + a_i
    want = spec.Lambda + np.asarray(cfg.a)
    assert np.allclose(sg.q, want, atol=1e-12)


def test_generator_structure(gen):
    _, spec, sg = gen
    assert np.allclose(sg.G.sum(axis=1), 0.0, atol=1e-12)
    assert np.allclose(sg.kappa.sum(axis=1), 1.0, atol=1e-12)
    off = sg.G - np.diag(np.diag(sg.G))
    assert np.all(off >= -1e-15)
    # off-diagonal generator entries factor as q_i kappa_ij
    assert np.allclose(off, sg.q[:, None] * sg.kappa * (1 - np.eye(2)), atol=1e-12)


def test_segments_cover_horizon(gen):
    _, _, sg = gen
    segs = simulate_spine(sg, 0, 50.0, 12345)
    assert segs[0][0] == 0.0
    assert segs[-1][1] == 50.0
    for (a0, a1, s), (b0, _, _) in zip(segs, segs[1:]):
        assert a1 == b0
        assert a1 > a0
        assert s in (0, 1)
    occ = occupation_fractions(segs, 2)
    assert occ.sum() == pytest.approx(1.0, abs=1e-12)


def test_vectorized_endpoint_matches_scalar(gen):
    _, _, sg = gen
    t = 7.3
    keys = _rng.derive_key(222, np.arange(50))
    vec = _states_at(sg, 0, t, keys)
    for j in range(50):
        segs = simulate_spine(sg, 0, t, int(keys[j]))
        assert vec[j] == segs[-1][2]


def test_long_run_occupation_near_rho(gen):
    _, spec, sg = gen
    segs = simulate_spine(sg, 0, 20_000.0, 99)
    occ = occupation_fractions(segs, 2)
    assert np.all(np.abs(occ - spec.rho()) < 0.02)


def test_many_to_one_exact_identity_random_configs():
    rng = np.random.default_rng(8)
    for _ in range(5):
        k = int(rng.integers(2, 5))
        eta = rng.uniform(0.05, 0.6, size=(k, k))
        np.fill_diagonal(eta, 0.0)
        cfg = reference_model()
        cfg = type(cfg)(
            K=k,
            a=tuple(rng.uniform(-0.6, 0.4, size=k)),
            b=tuple(rng.uniform(0.0, 0.5, size=k)),
            eta=tuple(tuple(row) for row in eta),
            gamma_measures=tuple(
                type(cfg.gamma_measures[0])(()) for _ in range(k)
            ),
            mu0=tuple(np.ones(k)),
        )
        spec = perron_frobenius(drift_matrix(cfg))
        sg = spine_generator(cfg, spec)
        f = rng.uniform(0.0, 2.0, size=k)
        rep = many_to_one_gap(cfg, spec, sg, f, 1.0, 0, 500, 77)
        assert rep.metadata["exact_gap"] <= 1e-10


def test_many_to_one_monte_carlo(gen):
    cfg, spec, sg = gen
    rep = many_to_one_gap(cfg, spec, sg, (1.0, 3.0), 1.0, 0, 20_000, 4)
    assert rep.passed
    z = (rep.estimate - rep.oracle) / rep.std_error
    assert abs(z) <= 3.0
    assert rep.recompute_pass() == rep.passed


def test_stationarity(gen):
    _, spec, sg = gen
    rep = stationary_check(sg, spec)
    assert rep.passed
    assert rep.estimate < 1e-12
    assert rep.metadata["resid_semigroup"] < 1e-10
    assert rep.recompute_pass() == rep.passed


def test_spine_input_validation(gen):
    _, _, sg = gen
    with pytest.raises(ValueError):
        simulate_spine(sg, 5, 1.0, 0)
    with pytest.raises(ValueError):
        simulate_spine(sg, 0, -1.0, 0)
