"""Deterministic semigroup objects: log-Laplace flow, means, variances.

The Laplace functional of the process is closed under the flow
dV/dt = -psi(., V), V_0 = f: for nonnegative f,
E_mu[exp(-<f, X_t>)] = exp(-<V_t f, mu>).  This module integrates that flow
with a classical fixed-step scheme, provides an independent Picard route to
the linearized (mean) flow, and evaluates the exact variance of <f, X_T>
by quadrature of the second-moment formula.  The three routes are kept
separate on purpose: they cross-check each other and the simulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import NoConvergence, QuadratureError, StepError
from .model import ModelConfig, PowerLaw, make_psi
from .spectral import SpectralData, drift_matrix

__all__ = [
    "OdeSolution",
    "solve_log_laplace",
    "mean_via_picard",
    "second_moment",
]


@dataclass(frozen=True)
class OdeSolution:
    """Log-Laplace trajectory on a uniform grid.

    V has shape (n_steps + 1, K) with V[0] = f.  clamped counts the
    (time, component) pairs where a tiny negative overshoot was clipped to
    zero in the stored trajectory; the integration itself runs unclamped.
    """

    t_grid: np.ndarray
    V: np.ndarray
    step: float
    method: str = "rk4"
    clamped: int = 0

    def __post_init__(self):
        for name in ("t_grid", "V"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def at_final(self) -> np.ndarray:
        return self.V[-1]


def _steps_for(T: float, dt: float) -> int:
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"dt={dt} must divide T={T}")
    return n


def _rk4_raw(cfg: ModelConfig, f: np.ndarray, n: int, dt: float) -> np.ndarray:
    """Fixed-step RK4 on dV/dt = -psi(., V); returns the raw grid values."""
    k = cfg.K
    out = np.empty((n + 1, k))
    out[0] = f
    v = f.astype(float)
    psi = make_psi(cfg)
    half = 0.5 * dt
    sixth = dt / 6.0
    # overflow/invalid to non-finite is the blow-up signal, not an error
    with np.errstate(over="ignore", invalid="ignore"):
        for m in range(n):
            k1 = psi(v)
            k2 = psi(v - half * k1)
            k3 = psi(v - half * k2)
            k4 = psi(v - dt * k3)
            v = v - sixth * (k1 + 2.0 * (k2 + k3) + k4)
            if not np.all(np.isfinite(v)):
                raise StepError(
                    f"log-Laplace integration left the finite range at step "
                    f"{m + 1}; decrease dt"
                )
            out[m + 1] = v
    return out


def solve_log_laplace(cfg: ModelConfig, f, T: float, dt: float) -> OdeSolution:
    """Integrate the log-Laplace flow from V_0 = f up to time T.

    Parameters
    ----------
    cfg : ModelConfig
    f : nonnegative vector of length K
    T : positive horizon
    dt : step, at most T/10; must divide T

    The solve is repeated at step dt/2 and the two endpoint values must
    agree within 1e-6 in the sup norm, otherwise StepError.  Tiny negative
    overshoots are clipped to zero only in the stored trajectory, and the
    number of clips is recorded on the solution.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (cfg.K,):
        raise ValueError(f"f must have shape ({cfg.K},)")
    if np.any(f < 0.0):
        raise ValueError("f must be componentwise nonnegative")
    if T <= 0.0:
        raise ValueError("T must be positive")
    if dt <= 0.0 or dt > T / 10.0 + 1e-12:
        raise ValueError("dt must be positive and at most T/10")
    n = _steps_for(T, dt)

    raw = _rk4_raw(cfg, f, n, dt)
    half = _rk4_raw(cfg, f, 2 * n, dt / 2.0)
    disagreement = float(np.abs(raw[-1] - half[-1]).max())
    if disagreement > 1e-6:
        raise StepError(
            f"step-halving check failed: endpoint moved by {disagreement:.3e} "
            "(> 1e-6); decrease dt"
        )

    clamped = int(np.count_nonzero(raw < 0.0))
    stored = np.maximum(raw, 0.0)
    return OdeSolution(
        t_grid=np.linspace(0.0, n * dt, n + 1),
        V=stored,
        step=float(dt),
        method="rk4",
        clamped=clamped,
    )


def mean_via_picard(cfg: ModelConfig, f, T: float, dt: float) -> np.ndarray:
    """Mean functional E<f, X_T> per unit initial mass of each type, by
    Picard iteration of the mild (integral) form of the linear flow.

    F(t) = exp(-a t) f + int_0^t exp(-a (t-s)) eta F(s) ds, iterated to a
    sup-norm fixed point below 1e-10 relative to the solution scale on a
    uniform grid with trapezoidal prefix sums (the scale factor keeps the
    stopping rule meaningful when the mean grows to where successive
    sweeps differ by more than 1e-10 in raw floating point).  The
    iteration budget is 10 * ceil(exp(c0 T)) where c0 is the crude growth
    bound max_i sum_j eta[i][j] + max_i max(-a_i, 0); exceeding it raises
    NoConvergence.  This route never forms a matrix exponential, so it is
    an independent check of exp(tA).
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (cfg.K,):
        raise ValueError(f"f must have shape ({cfg.K},)")
    if T <= 0.0:
        raise ValueError("T must be positive")
    if dt <= 0.0 or dt > T / 10.0 + 1e-12:
        raise ValueError("dt must be positive and at most T/10")
    n = _steps_for(T, dt)

    a = cfg.a_array()
    eta = cfg.eta_array()
    c0 = float(eta.sum(axis=1).max() + np.maximum(-a, 0.0).max())
    try:
        budget = 10 * math.ceil(math.exp(c0 * T))
    except OverflowError:
        budget = None  # effectively unbounded; convergence decides

    t = np.linspace(0.0, n * dt, n + 1)
    decay = np.exp(-np.outer(t, a))          # (n+1, K): exp(-a t_k)
    grow = np.exp(np.outer(t, a))            # exp(+a s_k), for the kernel
    base = decay * f                          # exp(-a t) f

    F = np.tile(f, (n + 1, 1))
    it = 0
    while True:
        G = F @ eta.T                         # G[k] = eta F(s_k)
        integ = grow * G                      # exp(a s) eta F(s)
        # trapezoidal prefix sum of integ over s
        pref = np.zeros_like(integ)
        np.cumsum(0.5 * dt * (integ[1:] + integ[:-1]), axis=0, out=pref[1:])
        F_new = base + decay * pref
        delta = float(np.abs(F_new - F).max())
        scale = max(1.0, float(np.abs(F_new).max()))
        F = F_new
        it += 1
        if delta < 1e-10 * scale:
            break
        if budget is not None and it >= budget:
            raise NoConvergence(
                f"Picard iteration missed the 1e-10 fixed point within "
                f"{budget} sweeps (last delta {delta:.3e})"
            )
    return F[-1].copy()


def _jump_second_moment_vector(cfg: ModelConfig, v: np.ndarray) -> np.ndarray:
    """Per-type integral of (y . v)^2 against gamma[i]."""
    return np.array(
        [g.second_moment_along(v) for g in cfg.gamma_measures]
    )


def _second_moment_simpson(
    cfg: ModelConfig, A: np.ndarray, f: np.ndarray, T: float, n_panels: int
) -> float:
    """Simpson quadrature of the variance integrand on 2*n_panels steps.

    Var<f, X_T> = int_0^T mu0' M(s) [ 2 b (M(T-s) f)^2
                                      + jump second moments of M(T-s) f ] ds,
    evaluated with exact matrix exponentials propagated step by step.
    """
    m = 2 * n_panels
    hs = T / m
    E = expm(hs * A)
    mu0 = cfg.mu0_array()
    b = cfg.b_array()

    rows = np.empty((m + 1, cfg.K))
    rows[0] = mu0
    for k in range(m):
        rows[k + 1] = rows[k] @ E

    vecs = np.empty((m + 1, cfg.K))
    vecs[m] = f
    for k in range(m - 1, -1, -1):
        vecs[k] = E @ vecs[k + 1]

    vals = np.empty(m + 1)
    for k in range(m + 1):
        v = vecs[k]
        source = 2.0 * b * v * v + _jump_second_moment_vector(cfg, v)
        vals[k] = float(np.dot(rows[k], source))

    w = np.ones(m + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return float((hs / 3.0) * np.dot(w, vals))


def second_moment(
    cfg: ModelConfig, spec: SpectralData, f, T: float
) -> float:
    """Exact variance of <f, X_T> started from mu0, by quadrature.

    The integrand is smooth, so Simpson on a fixed fine grid converges at
    fourth order; the grid is doubled once and the two values must agree
    to a 1e-8 relative tolerance, otherwise QuadratureError.  spec is
    accepted for interface symmetry with the Monte Carlo diagnostics and
    to fail fast on models without a dominant triple.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (cfg.K,):
        raise ValueError(f"f must have shape ({cfg.K},)")
    if np.any(f < 0.0):
        raise ValueError("f must be componentwise nonnegative")
    if T <= 0.0:
        raise ValueError("T must be positive")
    del spec
    A = np.asarray(drift_matrix(cfg))

    n = max(100, int(math.ceil(T / 0.02)))
    coarse = _second_moment_simpson(cfg, A, f, T, n)
    fine = _second_moment_simpson(cfg, A, f, T, 2 * n)
    scale = max(abs(fine), 1e-300)
    if abs(fine - coarse) > 1e-8 * scale:
        raise QuadratureError(
            f"variance quadrature did not settle: {coarse!r} vs {fine!r}"
        )
    return fine


def has_heavy_tail(cfg: ModelConfig) -> bool:
    """True when any jump measure is a power law (infinite activity)."""
    return any(isinstance(g, PowerLaw) for g in cfg.gamma_measures)


def total_jump_rates(cfg: ModelConfig) -> np.ndarray:
    """Per-type rate of simulable jumps: full rate for finite measures,
    above-cutoff rate for power laws."""
    return np.array([g.total_rate() for g in cfg.gamma_measures])
