"""Log-Laplace flow, Picard mean equation, and second-moment quadrature."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from csbp import (
    FiniteAtoms,
    PowerLaw,
    StepError,
    drift_matrix,
    mean_via_picard,
    second_moment,
    solve_log_laplace,
)
from csbp.semigroup import has_heavy_tail, total_jump_rates
from conftest import reference_model
from test_model import one_type


def test_logistic_closed_form():
    """K=1 quadratic mechanism integrates to the logistic solution."""
    lam, beta, theta, T = 0.4, 0.25, 0.9, 2.0
    cfg = one_type(a=-lam, b=beta)
    sol = solve_log_laplace(cfg, (theta,), T, 0.001)
    e = np.exp(lam * T)
    want = theta * e / (1.0 + beta * theta / lam * (e - 1.0))
    assert sol.at_final()[0] == pytest.approx(want, rel=1e-10)


def test_linear_case_is_matrix_exponential():
    cfg = reference_model()
    cfg_lin = type(cfg)(
        K=2, a=cfg.a, b=(0.0, 0.0), eta=cfg.eta,
        gamma_measures=(FiniteAtoms(()), FiniteAtoms(())), mu0=cfg.mu0,
    )
    A = drift_matrix(cfg_lin)
    f = np.array([0.7, 1.3])
    sol = solve_log_laplace(cfg_lin, f, 2.0, 0.001)
    want = expm(2.0 * A) @ f
    assert np.allclose(sol.at_final(), want, rtol=1e-9, atol=1e-12)


def test_solution_grid_shape():
    cfg = reference_model()
    sol = solve_log_laplace(cfg, (1.0, 1.0), 1.0, 0.01)
    assert sol.t_grid[0] == 0.0 and sol.t_grid[-1] == 1.0
    assert sol.V.shape == (len(sol.t_grid), 2)
    assert np.allclose(sol.V[0], [1.0, 1.0])


@given(
    f=st.tuples(st.floats(0.0, 3.0), st.floats(0.0, 3.0)),
    g=st.tuples(st.floats(0.0, 3.0), st.floats(0.0, 3.0)),
)
@settings(max_examples=25, deadline=None)
def test_flow_monotone_in_initial_condition(f, g):
    cfg = reference_model()
    hi = tuple(max(a, b) for a, b in zip(f, g))
    vf = solve_log_laplace(cfg, f, 1.0, 0.01).at_final()
    vh = solve_log_laplace(cfg, hi, 1.0, 0.01).at_final()
    assert np.all(vf <= vh + 1e-10)


@given(f=st.tuples(st.floats(0.05, 2.0), st.floats(0.05, 2.0)))
@settings(max_examples=25, deadline=None)
def test_flow_semigroup_property(f):
    cfg = reference_model()
    v1 = solve_log_laplace(cfg, f, 1.0, 0.005).at_final()
    v2 = solve_log_laplace(cfg, v1, 1.0, 0.005).at_final()
    v12 = solve_log_laplace(cfg, f, 2.0, 0.005).at_final()
    assert np.allclose(v2, v12, rtol=1e-8, atol=1e-10)


def test_step_error_on_stiff_problem():
    cfg = one_type(a=0.0, b=1000.0)
    with pytest.raises(StepError):
        solve_log_laplace(cfg, (5.0,), 1.0, 0.1)


def test_fourth_order_convergence():
    cfg = reference_model()
    f = (1.0, 2.0)
    ref = solve_log_laplace(cfg, f, 1.0, 0.000125).at_final()
    e1 = np.abs(solve_log_laplace(cfg, f, 1.0, 0.02).at_final() - ref).max()
    e2 = np.abs(solve_log_laplace(cfg, f, 1.0, 0.01).at_final() - ref).max()
    assert 10.0 < e1 / e2 < 22.0


def test_picard_exponential_growth():
    cfg = one_type(a=-1.0)
    m = mean_via_picard(cfg, (1.0,), 1.0, 0.0005)
    assert m[0] == pytest.approx(np.e, rel=1e-8)


def test_picard_matches_matrix_exponential():
    cfg = reference_model()
    A = drift_matrix(cfg)
    rng = np.random.default_rng(3)
    for _ in range(3):
        f = rng.uniform(0.0, 2.0, size=2)
        m = mean_via_picard(cfg, f, 2.0, 0.0005)
        assert np.allclose(m, expm(2.0 * A) @ f, rtol=1e-7, atol=1e-9)


def _spec_of(cfg):
    from csbp import perron_frobenius

    return perron_frobenius(drift_matrix(cfg))


def test_variance_pure_diffusion():
    # a=0, b=1/2, f=1: Var = int_0^1 2b ds = 1
    cfg = one_type(a=0.0, b=0.5)
    var = second_moment(cfg, _spec_of(cfg), (1.0,), 1.0)
    assert var == pytest.approx(1.0, rel=1e-8)


def test_variance_pure_jumps():
    # unit-rate unit jumps, compensated: Var = int_0^1 w y^2 ds = 1
    cfg = one_type(gamma=FiniteAtoms(((1.0, (1.0,)),)))
    var = second_moment(cfg, _spec_of(cfg), (1.0,), 1.0)
    assert var == pytest.approx(1.0, rel=1e-8)


def test_variance_supercritical_closed_form():
    # a=-1, b=1/2: m(t)=e^t, Var(t) = int_0^t e^s (e^(t-s))^2 ds = e^t(e^t - 1)
    cfg = one_type(a=-1.0, b=0.5)
    T = 1.5
    var = second_moment(cfg, _spec_of(cfg), (1.0,), T)
    eT = np.exp(T)
    assert var == pytest.approx(eT * (eT - 1.0), rel=1e-8)


def test_jump_rate_helpers():
    cfg = reference_model()
    assert not has_heavy_tail(cfg)
    assert np.allclose(total_jump_rates(cfg), [0.2, 0.2])
    pl = one_type(gamma=PowerLaw(c=0.1, theta=1.5, direction=(1.0,), u_max=1.0, eps=0.01))
    assert has_heavy_tail(pl)
    want = 0.1 * (0.01**-1.5 - 1.0) / 1.5
    assert total_jump_rates(pl)[0] == pytest.approx(want, rel=1e-12)
