"""Branching mechanism: exact values, closed-form cross-checks, invariants."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from csbp import (
    FiniteAtoms,
    ModelConfig,
    PowerLaw,
    check_moment_conditions,
    evaluate_psi,
    psi_vector,
    validate_model,
)
from conftest import reference_model


def one_type(a=0.0, b=0.0, gamma=FiniteAtoms(()), mu0=(1.0,)):
    return ModelConfig(
        K=1, a=(a,), b=(b,), eta=((0.0,),), gamma_measures=(gamma,), mu0=mu0
    )


def test_psi_atom_frozen_value():
    # a=1, b=0.5, single atom weight 1 at y=1, u=1:
    # 1*1 + 0.5*1 + (e^-1 - 1 + 1) = 1.5 + e^-1
    cfg = one_type(a=1.0, b=0.5, gamma=FiniteAtoms(((1.0, (1.0,)),)))
    val = evaluate_psi(cfg, 0, (1.0,))
    assert val == pytest.approx(1.8678794411714423, abs=1e-15)


def test_psi_quadratic_only():
    cfg = one_type(a=-0.3, b=2.0)
    u = 1.7
    assert evaluate_psi(cfg, 0, (u,)) == pytest.approx(-0.3 * u + 2.0 * u * u, rel=1e-14)


def _plaw_psi_quad(c, theta, x, u_max):
    """Compensated integral c * int_0^u_max (e^(-x s) - 1 + x s) s^(-1-theta) ds
    by adaptive quadrature, as an oracle independent of the library's
    incomplete-gamma closed form.  expm1 keeps the integrand accurate for
    small arguments."""
    if x == 0.0:
        return 0.0

    def integrand(s):
        z = s * x
        return c * (np.expm1(-z) + z) * s ** (-1.0 - theta)

    res = integrate.quad(
        integrand, 0.0, u_max, epsrel=1e-11, epsabs=1e-16, limit=300,
        full_output=1,
    )
    return res[0]


@pytest.mark.parametrize("theta", [1.2, 1.5, 1.9])
def test_psi_power_law_matches_quadrature(theta):
    pl = PowerLaw(c=0.7, theta=theta, direction=(1.0,), u_max=2.0)
    for x in (0.0, 0.05, 0.6, 3.0, 40.0):
        want = _plaw_psi_quad(0.7, theta, x, 2.0)
        assert pl.psi_integral(np.array([x])) == pytest.approx(want, rel=1e-9, abs=1e-13)


@pytest.mark.parametrize("theta", [1.2, 1.5, 1.9])
def test_psi_power_law_small_argument_series(theta):
    # below the series switch the quadratic term dominates; the two-term
    # expansion must join the parts formula smoothly
    pl = PowerLaw(c=0.7, theta=theta, direction=(1.0,), u_max=2.0)
    for x in (1e-9, 1e-6, 4.9e-5, 5.1e-5):
        lead = 0.7 * x**2 * 2.0 ** (2.0 - theta) / (2.0 * (2.0 - theta))
        assert pl.psi_integral(np.array([x])) == pytest.approx(lead, rel=1e-4)


def test_psi_power_law_negative_argument_continuation():
    # stage overshoot in the ODE driver can query slightly negative u;
    # the value must extend continuously through zero
    pl = PowerLaw(c=0.7, theta=1.5, direction=(1.0,), u_max=2.0)
    eps = 1e-7
    left = pl.psi_integral(np.array([-eps]))
    right = pl.psi_integral(np.array([eps]))
    assert np.isfinite(left)
    assert abs(left - right) < 1e-12


def test_power_law_moments():
    pl = PowerLaw(c=1.0, theta=1.5, direction=(1.0,), u_max=1.0)
    # int_0^1 s^p s^(-1-theta) ds = 1/(p - theta) for p > theta
    assert pl.p_moment_along((1.0,), 2.0) == pytest.approx(2.0, rel=1e-12)
    assert pl.p_moment_along((1.0,), 1.4) == np.inf
    assert pl.second_moment_along((1.0,)) == pytest.approx(2.0, rel=1e-12)
    assert np.isinf(pl.first_moment(0)[0])


def test_power_law_default_cutoff_floor():
    pl = PowerLaw(c=1.0, theta=1.5, direction=(1.0,), u_max=1.0)
    assert pl.eps >= 1.0 / 100.0
    assert pl.eps <= 0.5
    explicit = PowerLaw(c=1.0, theta=1.5, direction=(1.0,), u_max=1.0, eps=1e-4)
    assert explicit.eps == 1e-4


def test_atom_moments():
    g = FiniteAtoms(((0.5, (1.0, 2.0)), (0.25, (4.0, 0.0))))
    assert np.allclose(g.first_moment(2), [0.5 * 1 + 0.25 * 4, 0.5 * 2])
    v = np.array([1.0, 1.0])
    assert g.second_moment_along(v) == pytest.approx(0.5 * 9 + 0.25 * 16)


def test_validate_model_flags_moment_violation():
    cfg = ModelConfig(
        K=2,
        a=(0.0, 0.0),
        b=(0.1, 0.1),
        eta=((0.0, 0.1), (0.1, 0.0)),
        gamma_measures=(FiniteAtoms(((1.0, (0.0, 0.5)),)), FiniteAtoms(())),
        mu0=(1.0, 1.0),
    )
    problems = validate_model(cfg)
    assert any("exceeds eta[0][1]" in p for p in problems)
    assert validate_model(reference_model()) == []


def test_validate_model_rejects_off_diagonal_power_law():
    # infinite first moment cannot be dominated by a finite eta entry
    cfg = ModelConfig(
        K=2,
        a=(0.0, 0.0),
        b=(0.1, 0.1),
        eta=((0.0, 0.5), (0.1, 0.0)),
        gamma_measures=(
            PowerLaw(c=0.1, theta=1.5, direction=(0.0, 1.0), u_max=1.0),
            FiniteAtoms(()),
        ),
        mu0=(1.0, 1.0),
    )
    assert validate_model(cfg)


def test_evaluate_psi_rejects_negative_u():
    cfg = one_type(a=1.0)
    with pytest.raises(ValueError):
        evaluate_psi(cfg, 0, (-0.1,))


def test_check_moment_conditions():
    rep = check_moment_conditions(reference_model(), 2.0, (1.0, 1.0))
    assert rep.passed
    assert rep.metadata["rule"] == "finite"
    heavy = one_type(gamma=PowerLaw(c=0.1, theta=1.5, direction=(1.0,), u_max=1.0))
    # small-size divergence: int_0 s^p s^(-1-theta) ds finite iff p > theta
    assert check_moment_conditions(heavy, 1.9, (1.0,)).passed
    assert not check_moment_conditions(heavy, 1.4, (1.0,)).passed


atoms_strategy = st.lists(
    st.tuples(
        st.floats(0.01, 1.0),
        st.tuples(st.floats(0.0, 0.5), st.floats(0.0, 0.5)),
    ),
    min_size=1,
    max_size=4,
)


@given(atoms=atoms_strategy, u=st.tuples(st.floats(0.0, 3.0), st.floats(0.0, 3.0)))
@settings(max_examples=50, deadline=None)
def test_psi_invariant_under_atom_permutation(atoms, u):
    eta = (
        (0.0, max(sum(w * y[1] for w, y in atoms), 1.0)),
        (0.0, 0.0),
    )
    def build(order):
        return ModelConfig(
            K=2,
            a=(0.2, 0.1),
            b=(0.3, 0.4),
            eta=eta,
            gamma_measures=(FiniteAtoms(tuple(order)), FiniteAtoms(())),
            mu0=(1.0, 1.0),
        )
    fwd = evaluate_psi(build(atoms), 0, u)
    rev = evaluate_psi(build(list(reversed(atoms))), 0, u)
    assert fwd == pytest.approx(rev, rel=1e-12, abs=1e-12)


@given(
    d=st.tuples(st.floats(0.0, 2.0), st.floats(0.0, 2.0)),
    s=st.floats(0.05, 0.95),
)
@settings(max_examples=50, deadline=None)
def test_psi_branch_part_convex_along_rays(d, s):
    """psi minus the linear flow term is convex on rays from the origin."""
    cfg = reference_model()
    eta = cfg.eta_array()
    d = np.asarray(d)
    def branch(i, u):
        return evaluate_psi(cfg, i, u) + float(np.dot(eta[i], u))
    for i in range(cfg.K):
        lo, hi = branch(i, 0.0 * d), branch(i, 2.0 * d)
        mid = branch(i, 2.0 * s * d)
        bound = (1 - s) * lo + s * hi
        assert mid <= bound + 1e-10 * (1.0 + abs(bound))


@given(j=st.integers(0, 1), i=st.integers(0, 1))
@settings(max_examples=20, deadline=None)
def test_psi_gradient_at_zero_is_drift(i, j):
    """Jumps are fully compensated: the gradient at 0 is a_i e_j - eta_ij."""
    cfg = reference_model()
    eps = 1e-5
    e = np.zeros(2)
    e[j] = 1.0
    # one-sided second-order difference, psi(0) = 0
    grad = (4.0 * evaluate_psi(cfg, i, eps * e) - evaluate_psi(cfg, i, 2 * eps * e)) / (
        2.0 * eps
    )
    want = cfg.a[i] * (1.0 if i == j else 0.0) - cfg.eta[i][j]
    assert grad == pytest.approx(want, abs=1e-7)


def test_psi_vector_matches_scalar():
    cfg = reference_model()
    u = np.array([0.3, 1.1])
    vec = psi_vector(cfg, u)
    assert vec.shape == (2,)
    for i in range(2):
        assert vec[i] == pytest.approx(evaluate_psi(cfg, i, u), rel=1e-14)
