"""Ensemble simulation of the branching process with reproducible streams.

Each path owns a counter-based random stream keyed by its index, so results
are bitwise independent of ensemble size, chunk boundaries, and worker
count.  One time step applies, in a fixed order:

  1. second-order drift: X <- X (I + A dt + A^2 dt^2 / 2),
  2. diffusion: sqrt(2 b_j max(X_j, 0) dt) * Z_j, coefficients frozen at
     the step's starting state,
  3. jump events per source type: Poisson counts for each finite atom and
     for the above-cutoff part of each power law (counts of independent
     Poissons realize the superposition law exactly), plus a centered
     Gaussian standing in for the sub-cutoff power-law dust,
  4. subtraction of the conditional mean of step 3, so that the one-step
     conditional mean is exactly X (I + A dt + A^2 dt^2 / 2) -- the jump
     first moments already live inside A through eta,
  5. clipping at zero, and trapping at exact zero once total mass falls
     below 1e-12 (zero is absorbing for the true process).

Steps 2-4 are mean-neutral, so the simulated first moment matches
mu0' exp(tA) up to the third-order drift truncation alone; this is what
keeps mean-based statistical tests unbiased at practical step sizes.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _rng
from .errors import ConfigError
from .model import FiniteAtoms, ModelConfig, PowerLaw
from .spectral import drift_matrix, perron_frobenius

__all__ = ["PathRecord", "simulate_path", "simulate_ensemble"]

_TRAP = 1e-12
_CHUNK = 4096
_SIZE_REGION = 4096  # per-step slot budget for power-law jump sizes


@dataclass(frozen=True)
class PathRecord:
    """One simulated path on its recording grid.

    states[k] is the state at t_grid[k]; states are componentwise
    nonnegative and exactly zero from extinct_at onward.  jumps holds
    logged events as (time, source type, jump vector) tuples when logging
    was requested; n_jumps counts every simulated event (logged or not),
    excluding the Gaussian dust of power-law measures.  seed is the path's
    stream key: feeding it back to simulate_path reproduces the path.
    """

    t_grid: np.ndarray
    states: np.ndarray
    jumps: tuple
    seed: int
    extinct_at: float | None
    n_jumps: int

    def __post_init__(self):
        for name in ("t_grid", "states"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def _apply_right(X: np.ndarray, M: np.ndarray) -> np.ndarray:
    """X @ M accumulated column by column in fixed order.

    Avoids BLAS so the floating-point result is identical for any number
    of paths in the array, which is what makes chunked and multi-worker
    runs bitwise equal to serial ones.
    """
    out = np.zeros_like(X)
    for k in range(M.shape[0]):
        out += X[:, k, np.newaxis] * M[k]
    return out


class _StepPlan:
    """Precomputed matrices and slot layout for one (cfg, dt) pair."""

    def __init__(self, cfg: ModelConfig, dt: float):
        k = cfg.K
        A = np.asarray(drift_matrix(cfg))
        self.K = k
        self.dt = dt
        self.H = np.eye(k) + A * dt + (A @ A) * (dt * dt / 2.0)
        self.sq_diff = np.sqrt(2.0 * cfg.b_array() * dt)

        slot = 0
        self.diff_slots = np.arange(k, dtype=np.uint64)
        slot += k

        self.atoms = []  # (source, rate*dt, y-vector, slot base)
        self.plaws = []  # dicts per power-law source
        comp = np.zeros((k, k))
        for i, g in enumerate(cfg.gamma_measures):
            if isinstance(g, FiniteAtoms):
                for w, y in g.atoms:
                    if w <= 0.0:
                        continue
                    self.atoms.append((i, w * dt, np.asarray(y, dtype=float), slot))
                    slot += _rng.POISSON_SLOTS
                comp[i] += g.first_moment(k)
            elif isinstance(g, PowerLaw):
                if g.c <= 0.0:
                    continue
                entry = {
                    "i": i,
                    "measure": g,
                    "d": np.asarray(g.direction, dtype=float),
                    "rate_dt": g.rate_above_eps() * dt,
                    "count_base": slot,
                    "gauss_slot": slot + _rng.POISSON_SLOTS,
                    "dust_sd": np.sqrt(g.small_var_coeff() * dt),
                }
                slot += _rng.POISSON_SLOTS + 1
                self.plaws.append(entry)
                comp[i] += g.mean_above_eps(k)
            else:
                raise TypeError(f"unsupported jump measure: {type(g)!r}")
        for entry in self.plaws:
            entry["size_base"] = slot
            slot += _SIZE_REGION
        if slot >= (1 << _rng.SLOT_BITS):
            raise ConfigError("model has too many jump sources per step")
        self.comp_dt = comp * dt


def _run_chunk(cfg, T, dt, keys, record_steps, log_jumps):
    """Simulate one chunk of paths; pure function of its arguments."""
    plan = _StepPlan(cfg, dt)
    k = plan.K
    n = keys.shape[0]
    n_steps = int(round(T / dt))

    X = np.tile(cfg.mu0_array(), (n, 1))
    alive = np.ones(n, dtype=bool)
    extinct_at = np.full(n, np.nan)
    n_jumps = np.zeros(n, dtype=np.int64)
    logs = [[] for _ in range(n)] if log_jumps else None

    rec = np.empty((n, record_steps.shape[0], k))
    ptr = 0
    if record_steps[ptr] == 0:
        rec[:, ptr] = X
        ptr += 1

    kcol = keys[:, np.newaxis]
    for m in range(n_steps):
        Xc = X
        t_next = (m + 1) * dt

        new = _apply_right(Xc, plan.H)
        Z = _rng.normals(kcol, _rng.pack(m, plan.diff_slots)[np.newaxis, :])
        new += plan.sq_diff * np.sqrt(np.maximum(Xc, 0.0)) * Z
        new -= _apply_right(Xc, plan.comp_dt)

        for (i, wdt, y, base) in plan.atoms:
            lam = Xc[:, i] * wdt
            cnt = _rng.poisson(lam, keys, m, base)
            if cnt.any():
                new += np.outer(cnt, y)
                n_jumps += cnt
                if log_jumps:
                    yt = tuple(y)
                    for p in np.flatnonzero(cnt):
                        logs[p].extend([(t_next, i, yt)] * int(cnt[p]))

        for pl in plan.plaws:
            i = pl["i"]
            lam = Xc[:, i] * pl["rate_dt"]
            cnt = _rng.poisson(lam, keys, m, pl["count_base"])
            np.minimum(cnt, _SIZE_REGION, out=cnt)
            total = int(cnt.sum())
            if total:
                pidx = np.repeat(np.arange(n), cnt)
                starts = np.concatenate(([0], np.cumsum(cnt)[:-1]))
                within = np.arange(total) - np.repeat(starts, cnt)
                u = _rng.uniforms(
                    keys[pidx], _rng.pack(m, pl["size_base"] + within)
                )
                sizes = pl["measure"].inv_size(u)
                acc = np.zeros(n)
                np.add.at(acc, pidx, sizes)
                new += np.outer(acc, pl["d"])
                n_jumps += cnt
                if log_jumps:
                    d = pl["d"]
                    for p, s in zip(pidx, sizes):
                        logs[p].append((t_next, i, tuple(s * d)))
            zg = _rng.normals(keys, _rng.pack(m, pl["gauss_slot"]))
            sd = pl["dust_sd"] * np.sqrt(np.maximum(Xc[:, i], 0.0))
            new += np.outer(sd * zg, pl["d"])

        np.maximum(new, 0.0, out=new)
        X = new
        newly = alive & (X.sum(axis=1) < _TRAP)
        if newly.any():
            X[newly] = 0.0
            extinct_at[newly] = t_next
            alive = alive & ~newly

        if ptr < record_steps.shape[0] and record_steps[ptr] == m + 1:
            rec[:, ptr] = X
            ptr += 1

    return rec, extinct_at, n_jumps, logs


def _resolve_record_steps(T, dt, record_times, n_steps):
    """Map requested times to step indices, always including 0 and T."""
    if record_times is None:
        stride = max(1, -(-n_steps // 400))  # at most ~400 interior records
        steps = set(range(0, n_steps + 1, stride))
    else:
        steps = set()
        for tau in record_times:
            tau = float(tau)
            if tau < 0.0 or tau > T + 1e-9:
                raise ValueError(f"record time {tau} outside [0, {T}]")
            kk = int(round(tau / dt))
            if abs(kk * dt - tau) > 1e-9:
                raise ValueError(f"record time {tau} is not a multiple of dt={dt}")
            steps.add(kk)
    steps.add(0)
    steps.add(n_steps)
    return np.array(sorted(steps), dtype=np.int64)


def _validate_times(cfg: ModelConfig, T: float, dt: float) -> int:
    if T <= 0.0:
        raise ValueError("T must be positive")
    lam = perron_frobenius(np.asarray(drift_matrix(cfg))).Lambda
    bound = min(0.01, 0.1 / lam) if lam > 0 else 0.01
    if dt <= 0.0:
        raise ConfigError("dt must be positive")
    if dt > bound + 1e-15:
        raise ConfigError(
            f"dt={dt} exceeds the stability bound min(0.01, 0.1/Lambda)={bound:.6g}"
        )
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ConfigError(f"dt={dt} must divide the horizon T={T}")
    return n_steps


def _to_records(cfg, dt, record_steps, keys, rec, extinct_at, n_jumps, logs):
    t_grid = record_steps * dt
    out = []
    for p in range(keys.shape[0]):
        ext = extinct_at[p]
        out.append(
            PathRecord(
                t_grid=t_grid,
                states=rec[p],
                jumps=tuple(logs[p]) if logs is not None else (),
                seed=int(keys[p]),
                extinct_at=None if np.isnan(ext) else float(ext),
                n_jumps=int(n_jumps[p]),
            )
        )
    return out


def simulate_path(
    cfg: ModelConfig,
    T: float,
    dt: float,
    seed: int,
    record_times=None,
    log_jumps: bool = True,
) -> PathRecord:
    """Simulate a single path.

    seed is the path's stream key.  A path from simulate_ensemble is
    reproduced exactly by passing back its PathRecord.seed.  By default
    every step is recorded and jump events are logged.
    """
    n_steps = _validate_times(cfg, T, dt)
    if record_times is None:
        record_steps = np.arange(n_steps + 1, dtype=np.int64)
    else:
        record_steps = _resolve_record_steps(T, dt, record_times, n_steps)
    keys = np.array([np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)], dtype=np.uint64)
    rec, extinct_at, n_jumps, logs = _run_chunk(
        cfg, T, dt, keys, record_steps, log_jumps
    )
    if logs is None:
        logs = [[]]
    return _to_records(cfg, dt, record_steps, keys, rec, extinct_at, n_jumps, logs)[0]


def simulate_paths(
    cfg: ModelConfig,
    T: float,
    dt: float,
    seeds,
    record_times=None,
    log_jumps: bool = True,
) -> list:
    """Re-simulate a given set of path seeds as one vectorized batch.

    Each seed reproduces the path it came from bitwise (the per-step
    randomness is keyed by the seed alone, never by batch position), so
    this is the cheap way to replay selected ensemble members with a
    different recording grid or with jump logging turned on.
    """
    n_steps = _validate_times(cfg, T, dt)
    if record_times is None:
        record_steps = np.arange(n_steps + 1, dtype=np.int64)
    else:
        record_steps = _resolve_record_steps(T, dt, record_times, n_steps)
    keys = np.array(
        [np.uint64(int(s) & 0xFFFFFFFFFFFFFFFF) for s in seeds], dtype=np.uint64
    )
    if keys.shape[0] == 0:
        return []
    rec, extinct_at, n_jumps, logs = _run_chunk(
        cfg, T, dt, keys, record_steps, log_jumps
    )
    if logs is None:
        logs = [[] for _ in range(keys.shape[0])]
    return _to_records(cfg, dt, record_steps, keys, rec, extinct_at, n_jumps, logs)


def simulate_ensemble(
    cfg: ModelConfig,
    T: float,
    dt: float,
    N: int,
    base_seed: int,
    record_times=None,
    log_jumps: bool = False,
    workers: int | None = None,
) -> list:
    """Simulate N independent paths with keys derived from base_seed.

    record_times selects the recording grid (0 and T are always kept);
    by default roughly 400 evenly spaced steps are recorded.  workers
    defaults to the CSBP_WORKERS environment variable (1 when unset);
    the worker count parallelizes over fixed-size chunks of paths and
    never changes any output bit.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    n_steps = _validate_times(cfg, T, dt)
    record_steps = _resolve_record_steps(T, dt, record_times, n_steps)
    keys = _rng.derive_key(base_seed, np.arange(N))

    if workers is None:
        workers = int(os.environ.get("CSBP_WORKERS", "1"))
    workers = max(1, workers)

    chunks = [keys[lo : lo + _CHUNK] for lo in range(0, N, _CHUNK)]
    args = [(cfg, T, dt, ck, record_steps, log_jumps) for ck in chunks]

    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_star_chunk, args))
    else:
        results = [_run_chunk(*a) for a in args]

    out = []
    for ck, (rec, extinct_at, n_jumps, logs) in zip(chunks, results):
        out.extend(
            _to_records(cfg, dt, record_steps, ck, rec, extinct_at, n_jumps, logs)
        )
    return out


def _star_chunk(args):
    return _run_chunk(*args)
