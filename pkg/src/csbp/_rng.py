"""Keyed counter-based random variates for reproducible Monte Carlo.

Every variate produced here is a pure function of a 64-bit stream key and a
64-bit counter word: there is no mutable generator state.  A simulated path
therefore depends only on its own key and on the fixed slot layout of its
draws, never on ensemble size, chunk boundaries, execution order, or worker
count.

The word function is the splitmix64 finalizer applied twice, once to whiten
the counter and once to fold in the key.  The finalizer is a bijection on
uint64, so structurally distinct (key, counter) pairs map to well separated
words.  Counters pack a step index and a slot index; callers assign each
logical draw of a step its own slot so that unused draws cost nothing and
consumption order is irrelevant.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln, ndtri

__all__ = [
    "SLOT_BITS",
    "POISSON_SLOTS",
    "derive_key",
    "pack",
    "raw_words",
    "uniforms",
    "normals",
    "exponentials",
    "poisson",
]

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MULT1 = np.uint64(0xBF58476D1CE4E5B9)
_MULT2 = np.uint64(0x94D049BB133111EB)
_COUNTER_SALT = np.uint64(0x6A09E667F3BCC909)
_U64_MASK = 0xFFFFFFFFFFFFFFFF

# Counter layout: counter = step << SLOT_BITS | slot.
SLOT_BITS = 24

# Slots reserved per Poisson draw: one inversion uniform plus 16 rejection
# rounds of two uniforms each (the residual rejection probability after 16
# rounds is ~1e-20, far below anything observable).
POISSON_SLOTS = 34
_PTRS_ROUNDS = 16


def _mix(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, a bijection on uint64 (wrapping is the point)."""
    with np.errstate(over="ignore"):
        z = z.copy()
        z ^= z >> np.uint64(30)
        z *= _MULT1
        z ^= z >> np.uint64(27)
        z *= _MULT2
        z ^= z >> np.uint64(31)
    return z


def derive_key(base_seed: int, index):
    """Stream key for substream `index` of `base_seed`.

    Scalar index gives a scalar key; an array of indices gives an array.
    Keys for distinct indices under the same base seed are distinct.
    """
    idx = np.atleast_1d(np.asarray(index, dtype=np.uint64))
    base = np.uint64(int(base_seed) & _U64_MASK)
    with np.errstate(over="ignore"):
        keys = _mix(base + (idx + np.uint64(1)) * _GOLDEN)
    if np.ndim(index) == 0:
        return np.uint64(keys[0])
    return keys


def pack(step: int, slot) -> np.ndarray:
    """Counter word for (step, slot); slot must stay below 2**SLOT_BITS."""
    s = np.asarray(slot, dtype=np.uint64)
    return (np.uint64(step) << np.uint64(SLOT_BITS)) | s


def raw_words(keys, ctr) -> np.ndarray:
    """uint64 words for broadcast (key, counter) pairs."""
    k = np.asarray(keys, dtype=np.uint64)
    c = np.asarray(ctr, dtype=np.uint64)
    return _mix(k ^ _mix(c ^ _COUNTER_SALT))


def uniforms(keys, ctr) -> np.ndarray:
    """Uniforms on the open interval (0, 1)."""
    w = raw_words(keys, ctr)
    # 53 high bits, centered half a ulp off the endpoints.
    return ((w >> np.uint64(11)) + 0.5) * (2.0 ** -53)


def normals(keys, ctr) -> np.ndarray:
    """Standard normals via the inverse CDF (exact given the uniform)."""
    return ndtri(uniforms(keys, ctr))


def exponentials(keys, ctr) -> np.ndarray:
    """Unit-rate exponentials."""
    return -np.log1p(-uniforms(keys, ctr))


def _poisson_inversion(lam: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Poisson counts by CDF inversion of a single uniform; lam < 10."""
    out = np.zeros(lam.shape, dtype=np.int64)
    p = np.exp(-lam)
    cum = p.copy()
    active = u >= cum
    k = 0
    # For lam < 10 the CDF exceeds any representable uniform well before
    # k = 150; the cap only guards against pathological inputs.
    while active.any() and k < 150:
        k += 1
        p = p * (lam / k)
        cum = cum + p
        out[active] += 1
        active = active & (u >= cum)
    return out


def _poisson_ptrs(lam, keys, step: int, slot0: int) -> np.ndarray:
    """Poisson counts by transformed rejection (Hormann's PTRS); lam >= 10.

    Each rejection round consumes two uniforms at fixed slots, so accepted
    lanes and still-pending lanes never interfere with each other's streams.
    """
    n = lam.shape[0]
    out = np.zeros(n, dtype=np.int64)
    pending = np.arange(n)

    slam = np.sqrt(lam)
    loglam = np.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)

    for r in range(_PTRS_ROUNDS):
        if pending.size == 0:
            break
        kk = keys[pending]
        u = uniforms(kk, pack(step, slot0 + 2 * r)) - 0.5
        v = uniforms(kk, pack(step, slot0 + 2 * r + 1))
        us = 0.5 - np.abs(u)
        bp = b[pending]
        ap = a[pending]
        k = np.floor((2.0 * ap / us + bp) * u + lam[pending] + 0.43)

        accept = (us >= 0.07) & (v <= vr[pending])
        feasible = (k >= 0) & ~((us < 0.013) & (v > us))
        with np.errstate(divide="ignore", invalid="ignore"):
            lhs = np.log(v * invalpha[pending] / (ap / (us * us) + bp))
            rhs = -lam[pending] + k * loglam[pending] - gammaln(k + 1.0)
            accept |= feasible & (lhs <= rhs)

        if accept.any():
            out[pending[accept]] = k[accept].astype(np.int64)
            pending = pending[~accept]

    if pending.size:
        # Unreachable in practice (p ~ 1e-20); keep total and deterministic.
        out[pending] = np.floor(lam[pending]).astype(np.int64)
    return out


def poisson(lam, keys, step: int, slot_base: int) -> np.ndarray:
    """Poisson counts, one per lane, drawn at slots [slot_base, slot_base+34).

    lam and keys must have matching one-dimensional shapes.  Lanes with
    lam <= 0 return 0 without consuming entropy (slots are positional, so
    this cannot shift any other lane's stream).
    """
    lam = np.asarray(lam, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.uint64)
    out = np.zeros(lam.shape, dtype=np.int64)

    small = (lam > 0.0) & (lam < 10.0)
    if small.any():
        u = uniforms(keys[small], pack(step, slot_base))
        out[small] = _poisson_inversion(lam[small], u)

    big = lam >= 10.0
    if big.any():
        out[big] = _poisson_ptrs(lam[big], keys[big], step, slot_base + 1)
    return out
