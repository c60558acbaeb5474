"""TOML experiment configuration: parsing, schema checks, and hashing.

A config has three flat sections.  [model] declares the process (types,
drift, diffusion, flow matrix, jump measures); [run] declares horizon,
step, path count, seed, and output directory; [tests] declares the
functionals and time grid the diagnostics use.  Unknown keys anywhere are
rejected outright, defaults are recorded by name so every artifact states
which values were filled in, and the resolved configuration is hashed so
outputs can be traced to the exact inputs that produced them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ParseError, SchemaError
from .model import FiniteAtoms, ModelConfig, PowerLaw, validate_model

__all__ = ["ExperimentSpec", "load_config"]

_MODEL_KEYS = {"types", "a", "b", "eta", "mu0", "jumps"}
_RUN_KEYS = {"horizon", "dt", "paths", "base_seed", "out"}
_TESTS_KEYS = {"p", "t_grid", "f_test", "lln_ratio_tol"}
_ATOM_JUMP_KEYS = {"source", "kind", "atoms"}
_PLAW_JUMP_KEYS = {"source", "kind", "c", "theta", "direction", "u_max", "eps"}


@dataclass(frozen=True)
class ExperimentSpec:
    """A fully resolved experiment: model plus run and test settings.

    config_hash is the SHA-256 of the canonical JSON rendering of the
    resolved configuration (defaults filled in, power-law cutoffs made
    explicit), so two specs with equal hashes produce identical outputs.
    """

    model: ModelConfig
    horizon: float
    dt: float
    paths: int
    base_seed: int
    p: float
    t_grid: tuple
    f_test: tuple
    out_dir: str
    lln_ratio_tol: float
    defaults_applied: tuple
    config_hash: str


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _num(v, path: str) -> float:
    if not _is_num(v):
        raise SchemaError(f"{path} must be a number")
    return float(v)


def _intval(v, path: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaError(f"{path} must be an integer")
    return v


def _vec(v, n: int, path: str) -> tuple:
    if not isinstance(v, list) or len(v) != n or not all(_is_num(x) for x in v):
        raise SchemaError(f"{path} must be a list of {n} numbers")
    return tuple(float(x) for x in v)


def _check_keys(d: dict, allowed: set, prefix: str):
    for k in d:
        if k not in allowed:
            where = f"{prefix}.{k}" if prefix else k
            raise SchemaError(f"unknown key: {where}")


def _build_measure(entry: dict, idx: int, k: int):
    where = f"model.jumps[{idx}]"
    if not isinstance(entry, dict):
        raise SchemaError(f"{where} must be a table")
    kind = entry.get("kind")
    if kind == "atoms":
        _check_keys(entry, _ATOM_JUMP_KEYS, where)
        atoms_raw = entry.get("atoms", [])
        if not isinstance(atoms_raw, list):
            raise SchemaError(f"{where}.atoms must be a list of tables")
        atoms = []
        for j, at in enumerate(atoms_raw):
            aw = f"{where}.atoms[{j}]"
            if not isinstance(at, dict):
                raise SchemaError(f"{aw} must be a table")
            _check_keys(at, {"rate", "y"}, aw)
            if "rate" not in at or "y" not in at:
                raise SchemaError(f"{aw} needs both rate and y")
            atoms.append((_num(at["rate"], f"{aw}.rate"), _vec(at["y"], k, f"{aw}.y")))
        return FiniteAtoms(tuple(atoms))
    if kind == "powerlaw":
        _check_keys(entry, _PLAW_JUMP_KEYS, where)
        for req in ("c", "theta", "direction", "u_max"):
            if req not in entry:
                raise SchemaError(f"{where} needs key {req}")
        eps = entry.get("eps")
        if eps is not None:
            eps = _num(eps, f"{where}.eps")
        return PowerLaw(
            c=_num(entry["c"], f"{where}.c"),
            theta=_num(entry["theta"], f"{where}.theta"),
            direction=_vec(entry["direction"], k, f"{where}.direction"),
            u_max=_num(entry["u_max"], f"{where}.u_max"),
            eps=eps,
        )
    raise SchemaError(f'{where}.kind must be "atoms" or "powerlaw"')


def _measure_resolved(g) -> dict:
    if isinstance(g, FiniteAtoms):
        return {
            "kind": "atoms",
            "atoms": [{"rate": w, "y": list(y)} for w, y in g.atoms],
        }
    return {
        "kind": "powerlaw",
        "c": g.c,
        "theta": g.theta,
        "direction": list(g.direction),
        "u_max": g.u_max,
        "eps": g.eps,
    }


def _build(raw: dict) -> ExperimentSpec:
    if not isinstance(raw, dict):
        raise SchemaError("top level must be a table")
    _check_keys(raw, {"model", "run", "tests"}, "")
    if "model" not in raw:
        raise SchemaError("missing required section: model")
    defaults = []

    mraw = raw["model"]
    if not isinstance(mraw, dict):
        raise SchemaError("model must be a table")
    _check_keys(mraw, _MODEL_KEYS, "model")
    for req in ("types", "a", "b", "eta"):
        if req not in mraw:
            raise SchemaError(f"missing required key: model.{req}")
    k = _intval(mraw["types"], "model.types")
    if k < 1:
        raise SchemaError("model.types must be at least 1")
    a = _vec(mraw["a"], k, "model.a")
    b = _vec(mraw["b"], k, "model.b")
    for i, v in enumerate(b):
        if v < 0.0:
            raise SchemaError(f"b must be nonnegative (b[{i}] = {v})")
    eta_raw = mraw["eta"]
    if not isinstance(eta_raw, list) or len(eta_raw) != k:
        raise SchemaError(f"model.eta must be a {k}x{k} matrix")
    eta = tuple(_vec(row, k, f"model.eta[{i}]") for i, row in enumerate(eta_raw))
    for i in range(k):
        if eta[i][i] != 0.0:
            raise SchemaError(
                f"eta diagonal must be zero (eta[{i}][{i}] = {eta[i][i]}; "
                "the local linear rate belongs in a)"
            )
    if "mu0" in mraw:
        mu0 = _vec(mraw["mu0"], k, "model.mu0")
    else:
        mu0 = (1.0,) * k
        defaults.append("model.mu0")

    measures = [FiniteAtoms(()) for _ in range(k)]
    seen = set()
    jumps_raw = mraw.get("jumps", [])
    if not isinstance(jumps_raw, list):
        raise SchemaError("model.jumps must be an array of tables")
    for idx, entry in enumerate(jumps_raw):
        if not isinstance(entry, dict) or "source" not in entry:
            raise SchemaError(f"model.jumps[{idx}] needs a source type index")
        src = _intval(entry["source"], f"model.jumps[{idx}].source")
        if not (0 <= src < k):
            raise SchemaError(
                f"model.jumps[{idx}].source must lie in [0, {k})"
            )
        if src in seen:
            raise SchemaError(f"duplicate jump measure for source type {src}")
        seen.add(src)
        measures[src] = _build_measure(entry, idx, k)

    model = ModelConfig(
        K=k, a=a, b=b, eta=eta, gamma_measures=tuple(measures), mu0=mu0
    )
    violations = validate_model(model)
    if violations:
        raise SchemaError("invalid model: " + "; ".join(violations))

    rraw = raw.get("run", {})
    if not isinstance(rraw, dict):
        raise SchemaError("run must be a table")
    _check_keys(rraw, _RUN_KEYS, "run")

    def _run_default(key, value):
        defaults.append(f"run.{key}")
        return value

    horizon = (
        _num(rraw["horizon"], "run.horizon")
        if "horizon" in rraw
        else _run_default("horizon", 1.0)
    )
    dt = _num(rraw["dt"], "run.dt") if "dt" in rraw else _run_default("dt", 0.005)
    paths = (
        _intval(rraw["paths"], "run.paths")
        if "paths" in rraw
        else _run_default("paths", 10000)
    )
    base_seed = (
        _intval(rraw["base_seed"], "run.base_seed")
        if "base_seed" in rraw
        else _run_default("base_seed", 0)
    )
    out_dir = rraw.get("out")
    if out_dir is None:
        out_dir = _run_default("out", "results")
    elif not isinstance(out_dir, str):
        raise SchemaError("run.out must be a string")

    if horizon <= 0.0:
        raise SchemaError("run.horizon must be positive")
    if dt <= 0.0:
        raise SchemaError("run.dt must be positive")
    n_steps = round(horizon / dt)
    if n_steps < 1 or abs(n_steps * dt - horizon) > 1e-9 * max(horizon, 1.0):
        raise SchemaError("run.dt must divide run.horizon exactly")
    if paths < 1:
        raise SchemaError("run.paths must be at least 1")

    traw = raw.get("tests", {})
    if not isinstance(traw, dict):
        raise SchemaError("tests must be a table")
    _check_keys(traw, _TESTS_KEYS, "tests")

    def _tests_default(key, value):
        defaults.append(f"tests.{key}")
        return value

    p = _num(traw["p"], "tests.p") if "p" in traw else _tests_default("p", 2.0)
    if not (1.0 < p <= 2.0):
        raise SchemaError("tests.p must lie in (1, 2]")
    if "t_grid" in traw:
        tg = traw["t_grid"]
        if not isinstance(tg, list) or not tg or not all(_is_num(x) for x in tg):
            raise SchemaError("tests.t_grid must be a nonempty list of numbers")
        t_grid = tuple(sorted({float(x) for x in tg}))
    else:
        t_grid = _tests_default("t_grid", (horizon,))
    for t in t_grid:
        if not (0.0 < t <= horizon + 1e-9):
            raise SchemaError(f"tests.t_grid entry {t} outside (0, horizon]")
        kk = round(t / dt)
        if abs(kk * dt - t) > 1e-9:
            raise SchemaError(f"tests.t_grid entry {t} is not a multiple of dt")
    if "f_test" in traw:
        fraw = traw["f_test"]
        if not isinstance(fraw, list) or not fraw:
            raise SchemaError("tests.f_test must be a nonempty list of vectors")
        f_test = tuple(_vec(v, k, f"tests.f_test[{i}]") for i, v in enumerate(fraw))
        for i, fv in enumerate(f_test):
            if any(c < 0.0 for c in fv):
                raise SchemaError(f"tests.f_test[{i}] must be nonnegative")
    else:
        f_test = _tests_default("f_test", ((1.0,) * k,))
    ratio_tol = (
        _num(traw["lln_ratio_tol"], "tests.lln_ratio_tol")
        if "lln_ratio_tol" in traw
        else _tests_default("lln_ratio_tol", 0.05)
    )
    if not (0.0 < ratio_tol < 1.0):
        raise SchemaError("tests.lln_ratio_tol must lie in (0, 1)")

    resolved = {
        "model": {
            "types": k,
            "a": list(a),
            "b": list(b),
            "eta": [list(r) for r in eta],
            "mu0": list(mu0),
            "jumps": [
                {"source": i, **_measure_resolved(g)}
                for i, g in enumerate(measures)
                if not (isinstance(g, FiniteAtoms) and not g.atoms)
            ],
        },
        # run.out is a locator, not an input: it influences no computed
        # value, so it stays out of the hash and results stay comparable
        # across output directories
        "run": {
            "horizon": horizon,
            "dt": dt,
            "paths": paths,
            "base_seed": base_seed,
        },
        "tests": {
            "p": p,
            "t_grid": list(t_grid),
            "f_test": [list(v) for v in f_test],
            "lln_ratio_tol": ratio_tol,
        },
    }
    canonical = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    digest = hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    return ExperimentSpec(
        model=model,
        horizon=horizon,
        dt=dt,
        paths=paths,
        base_seed=base_seed,
        p=p,
        t_grid=t_grid,
        f_test=f_test,
        out_dir=out_dir,
        lln_ratio_tol=ratio_tol,
        defaults_applied=tuple(defaults),
        config_hash=digest,
    )


def _read_raw(path: str) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        return tomllib.loads(data.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as e:
        raise ParseError(f"{path}: {e}") from e


def load_config(path: str) -> ExperimentSpec:
    """Parse, validate, and resolve a TOML experiment file.

    Raises ParseError on TOML syntax problems (message carries the
    decoder's line/column) and SchemaError on unknown keys, type or shape
    mismatches, and semantically invalid models.
    """
    return _build(_read_raw(path))
