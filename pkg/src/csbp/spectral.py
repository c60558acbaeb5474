"""Spectral objects of the mean-flow matrix.

The mean of the process evolves linearly: E<f, X_t> = mu0' exp(tA) f with
A = -diag(a) + eta.  A is a Metzler matrix (nonnegative off-diagonal); when
the eta graph is strongly connected its dominant eigenvalue Lambda is real
and simple with strictly positive right and left eigenvectors h and h_hat.
Everything downstream (martingale normalization, spine tilting, mixing
rates) is built from the triple (Lambda, h, h_hat) computed here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ConvergenceError, IrreducibilityError
from .model import ModelConfig

__all__ = [
    "SpectralData",
    "drift_matrix",
    "perron_frobenius",
    "mean_matrix",
    "tilde_p",
    "mixing_profile",
]

_RESID_TOL = 1e-10


@dataclass(frozen=True)
class SpectralData:
    """Dominant eigenvalue Lambda with eigenvectors normalized so that
    ||h||_2 = 1 and h . h_hat = 1.  gap is Lambda minus the largest real
    part among the remaining eigenvalues (None when K = 1).
    """

    Lambda: float
    h: np.ndarray
    h_hat: np.ndarray
    gap: float | None

    def __post_init__(self):
        for name in ("h", "h_hat"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def rho(self) -> np.ndarray:
        """Stationary weights h * h_hat of the spine chain (sum to 1)."""
        return self.h * self.h_hat


def drift_matrix(cfg: ModelConfig) -> np.ndarray:
    """A = -diag(a) + eta, the generator of the mean flow (read-only)."""
    a = np.asarray(cfg.a, dtype=float)
    out = cfg.eta_array() - np.diag(a)
    out.setflags(write=False)
    return out


def _check_strongly_connected(off: np.ndarray):
    n = off.shape[0]
    if n == 1:
        return
    graph = csr_matrix((off > 0.0).astype(np.int8))
    ncomp, _ = connected_components(graph, directed=True, connection="strong")
    if ncomp != 1:
        raise IrreducibilityError(
            f"eta graph is not strongly connected ({ncomp} strong components)"
        )


def _positive_real_eigvec(vals, vecs, which: str):
    """Pick the dominant eigenpair, demanding a real simple eigenvalue with
    a strictly one-signed eigenvector."""
    order = np.argsort(vals.real)
    top = order[-1]
    lam = vals[top]
    scale = max(np.abs(vals.real).max(), 1.0)
    if abs(lam.imag) > 1e-10 * scale:
        raise ConvergenceError(
            f"dominant eigenvalue of {which} has imaginary part {lam.imag:.3e}"
        )
    if len(vals) > 1:
        runner = vals[order[-2]].real
        if lam.real - runner < 1e-9 * scale:
            raise ConvergenceError(
                f"dominant eigenvalue of {which} is not numerically simple"
            )
    v = vecs[:, top]
    if np.abs(v.imag).max() > 1e-10 * np.abs(v).max():
        raise ConvergenceError(f"dominant eigenvector of {which} is not real")
    v = v.real
    if v.sum() < 0:
        v = -v
    if np.any(v <= 0.0):
        raise ConvergenceError(
            f"dominant eigenvector of {which} is not strictly positive"
        )
    return float(lam.real), v


def perron_frobenius(A: np.ndarray) -> SpectralData:
    """Dominant triple (Lambda, h, h_hat) of a Metzler matrix.

    Raises IrreducibilityError when the off-diagonal support graph is not
    strongly connected, and ConvergenceError when the computed pair fails
    its residual check ||A v - Lambda v|| <= 1e-10 * ||A|| * ||v||.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be a square matrix")
    off = A - np.diag(np.diag(A))
    if np.any(off < 0.0):
        raise ValueError("A must have nonnegative off-diagonal entries")
    _check_strongly_connected(off)

    vals, vecs = np.linalg.eig(A)
    lam, h = _positive_real_eigvec(vals, vecs, "A")
    vals_t, vecs_t = np.linalg.eig(A.T)
    lam_t, hh = _positive_real_eigvec(vals_t, vecs_t, "A'")

    scale = max(np.abs(A).max(), 1.0)
    if abs(lam - lam_t) > 1e-9 * scale:
        raise ConvergenceError(
            f"left/right dominant eigenvalues disagree: {lam} vs {lam_t}"
        )

    h = h / np.linalg.norm(h)
    hh = hh / float(np.dot(h, hh))

    for v, m, name in ((h, A, "right"), (hh, A.T, "left")):
        resid = np.abs(m @ v - lam * v).max()
        if resid > _RESID_TOL * scale * np.abs(v).max():
            raise ConvergenceError(
                f"{name} eigenvector residual {resid:.3e} exceeds tolerance"
            )

    rest = np.delete(np.sort(vals.real), -1)
    gap = float(lam - rest.max()) if rest.size else None
    return SpectralData(Lambda=lam, h=h, h_hat=hh, gap=gap)


def mean_matrix(A: np.ndarray, t: float) -> np.ndarray:
    """M(t) = exp(tA): mean mass of each type j from a unit of type i."""
    if t < 0.0:
        raise ValueError("t must be nonnegative")
    return expm(float(t) * np.asarray(A, dtype=float))


def _normalized_kernel(spec: SpectralData, A: np.ndarray, t: float) -> np.ndarray:
    """exp(-Lambda t) M(t) / (h_i h_hat_j), computed via the shifted matrix
    exp(t (A - Lambda I)) so large t cannot overflow."""
    A = np.asarray(A, dtype=float)
    shifted = expm(float(t) * (A - spec.Lambda * np.eye(A.shape[0])))
    return shifted / np.outer(spec.h, spec.h_hat)


def tilde_p(spec: SpectralData, A: np.ndarray, t: float, i: int, j: int) -> float:
    """Mixing kernel entry; rows of tilde_p(t, i, .) weighted by rho sum
    to one, and the whole kernel converges to 1 at rate exp(-gap t)."""
    if t <= 0.0:
        raise ValueError("t must be positive")
    k = spec.h.shape[0]
    if not (0 <= i < k and 0 <= j < k):
        raise ValueError("type index out of range")
    return float(_normalized_kernel(spec, A, t)[i, j])


def mixing_profile(spec: SpectralData, A: np.ndarray, t_grid) -> list:
    """Pairs (t, max_ij |tilde_p(t,i,j) - 1|) over a positive time grid."""
    out = []
    for t in t_grid:
        t = float(t)
        if t <= 0.0:
            raise ValueError("t_grid entries must be positive")
        dev = float(np.abs(_normalized_kernel(spec, A, t) - 1.0).max())
        out.append((t, dev))
    return out
