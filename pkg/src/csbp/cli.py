"""Command line front end: run the pipelines and write their artifacts.

Subcommands: spectral, laplace, simulate, spine, lln, and all (which runs
the other five).  Outputs are deterministic byte for byte given the same
config and seed: JSON is dumped with sorted keys, CSV floats use %.17g,
no artifact contains a timestamp or hostname, and every file embeds the
config hash and package version.  A manifest.json with per-file SHA-256
hashes is written last.  The only environment influence is CSBP_WORKERS,
which sets the simulation worker count and never changes any output bit.

Exit status: 0 when every report passed, 1 when a report failed, 2 on an
error (also recorded in error.json inside the output directory).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__, _rng, diagnostics, semigroup, spectral, spine
from .config import ExperimentSpec, _build, _read_raw
from .errors import CsbpError
from .model import check_moment_conditions
from .reports import Report, _f as _jsonify
from .simulator import simulate_ensemble, simulate_paths

__all__ = ["main", "run"]

_COMMANDS = ("spectral", "laplace", "simulate", "spine", "lln", "all")

# Fixed substream indices per pipeline, so the same base seed never feeds
# two different pipelines the same path keys.
_STREAM_SIM = 101
_STREAM_LLN = 102
_STREAM_M2O = 103
_STREAM_CHAIN = 104


class _OutDir:
    """Collects written files and their hashes for the manifest."""

    def __init__(self, root: str, provenance: dict):
        self.root = root
        self.provenance = provenance
        self.files = {}
        os.makedirs(root, exist_ok=True)

    def _write(self, name: str, data: bytes):
        with open(os.path.join(self.root, name), "wb") as fh:
            fh.write(data)
        self.files[name] = {
            "sha256": hashlib.sha256(data).hexdigest(),
            "bytes": len(data),
        }

    def write_json(self, name: str, payload: dict):
        body = dict(payload)
        body.update(self.provenance)
        text = json.dumps(_jsonify(body), sort_keys=True, indent=2) + "\n"
        self._write(name, text.encode("utf-8"))

    def write_csv(self, name: str, header, rows):
        lines = [
            "# config=%s version=%s"
            % (self.provenance["config_hash"], self.provenance["version"]),
            ",".join(header),
        ]
        for row in rows:
            lines.append(
                ",".join(
                    ("%d" % v) if isinstance(v, (int, np.integer)) else ("%.17g" % v)
                    for v in row
                )
            )
        self._write(name, ("\n".join(lines) + "\n").encode("utf-8"))

    def write_manifest(self, command: str):
        listing = "\n".join(
            f"{name}:{info['sha256']}" for name, info in sorted(self.files.items())
        )
        manifest = {
            "command": command,
            "files": dict(sorted(self.files.items())),
            "manifest_sha256": hashlib.sha256(listing.encode("utf-8")).hexdigest(),
        }
        manifest.update(self.provenance)
        text = json.dumps(manifest, sort_keys=True, indent=2) + "\n"
        with open(os.path.join(self.root, "manifest.json"), "wb") as fh:
            fh.write(text.encode("utf-8"))


def _spectral_objects(exp: ExperimentSpec):
    A = np.asarray(spectral.drift_matrix(exp.model))
    sd = spectral.perron_frobenius(A)
    return A, sd


def _record_times(exp: ExperimentSpec, extra=()):
    n_steps = round(exp.horizon / exp.dt)
    stride = max(1, -(-n_steps // 200))
    times = {k * exp.dt for k in range(0, n_steps + 1, stride)}
    times.add(exp.horizon)
    times.update(float(t) for t in extra)
    return sorted(times)


def _mean_report(ensemble, exp, A, f, name):
    t_rec = ensemble[0].t_grid
    states_T = np.stack([p.states[-1] for p in ensemble])
    y = states_T @ np.asarray(f)
    n = len(ensemble)
    est = float(y.mean())
    se = float(y.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    oracle = float(
        exp.model.mu0_array() @ spectral.mean_matrix(A, float(t_rec[-1])) @ np.asarray(f)
    )
    atol = 1e-4 * abs(oracle)
    return Report(
        name=name,
        estimate=est,
        std_error=se,
        oracle=oracle,
        n_samples=n,
        passed=bool(abs(est - oracle) <= 3.0 * se + atol),
        metadata={"rule": "3se", "atol": atol, "f": tuple(map(float, f))},
    )


def _cmd_spectral(exp: ExperimentSpec, out: _OutDir) -> bool:
    A, sd = _spectral_objects(exp)
    profile = spectral.mixing_profile(sd, A, exp.t_grid)
    moment = check_moment_conditions(exp.model, exp.p, np.asarray(sd.h))
    k = exp.model.K
    kern = np.array(
        [[spectral.tilde_p(sd, A, 1.0, i, j) for j in range(k)] for i in range(k)]
    )
    stoch_resid = float(np.abs(kern @ sd.rho() - 1.0).max())
    payload = {
        "Lambda": sd.Lambda,
        "gap": sd.gap,
        "h": list(sd.h),
        "h_hat": list(sd.h_hat),
        "rho": list(sd.rho()),
        "drift_matrix": [list(r) for r in A],
        "mixing_profile": [[t, d] for t, d in profile],
        "rho_row_sum_residual": stoch_resid,
        "moment_condition": moment.to_json_dict(),
    }
    passed = moment.passed and stoch_resid < 1e-10
    payload["pass"] = passed
    out.write_json("spectral.json", payload)
    return passed


def _cmd_laplace(exp: ExperimentSpec, out: _OutDir) -> bool:
    A, _ = _spectral_objects(exp)
    # Fourth-order steps at 5e-3 put the ODE error near 1e-10, far below
    # every Monte Carlo tolerance; the step-halving check still guards it.
    n_ode = max(100, round(exp.horizon / min(exp.dt, 5e-3)))
    ode_dt = exp.horizon / n_ode
    summary = []
    ok = True
    for i, f in enumerate(exp.f_test):
        sol = semigroup.solve_log_laplace(exp.model, f, exp.horizon, ode_dt)
        picard = semigroup.mean_via_picard(exp.model, f, exp.horizon, ode_dt)
        expm_mean = spectral.mean_matrix(A, exp.horizon) @ np.asarray(f)
        mean_gap = float(np.abs(picard - expm_mean).max())
        # Relative gate: at supercritical horizons the means grow like
        # exp(Lambda * T), so an absolute threshold would reject agreement
        # that is exact to floating-point resolution.
        mean_scale = 1.0 + float(np.abs(expm_mean).max())
        ok = ok and mean_gap <= 1e-6 * mean_scale
        stride = max(1, sol.t_grid.shape[0] // 400)
        idx = sorted(set(range(0, sol.t_grid.shape[0], stride)) | {sol.t_grid.shape[0] - 1})
        out.write_csv(
            f"laplace_f{i}.csv",
            ["t"] + [f"V_{j}" for j in range(exp.model.K)],
            [[sol.t_grid[k]] + list(sol.V[k]) for k in idx],
        )
        summary.append(
            {
                "f": list(f),
                "V_final": list(sol.at_final()),
                "ode_step": sol.step,
                "clamped": sol.clamped,
                "mean_picard": list(picard),
                "mean_expm": list(expm_mean),
                "mean_route_gap": mean_gap,
            }
        )
    out.write_json("laplace.json", {"functionals": summary, "pass": ok})
    return ok


def _cmd_simulate(exp: ExperimentSpec, out: _OutDir) -> bool:
    A, sd = _spectral_objects(exp)
    ensemble = simulate_ensemble(
        exp.model,
        exp.horizon,
        exp.dt,
        exp.paths,
        int(_rng.derive_key(exp.base_seed, _STREAM_SIM)),
        record_times=_record_times(exp, exp.t_grid),
    )
    reports = []
    for i, f in enumerate(exp.f_test):
        reports.append(_mean_report(ensemble, exp, A, f, f"first-moment[{i}]"))
        reports.append(
            diagnostics.laplace_report(ensemble, exp.model, f, exp.horizon)
        )
        reports.append(
            diagnostics.variance_report(ensemble, exp.model, sd, f, exp.horizon)
        )
    reports.append(
        diagnostics.jump_rate_report(ensemble, exp.model, sd, exp.horizon)
    )

    extinct = [p for p in ensemble if p.extinct_at is not None]
    finals = np.stack([p.states[-1] for p in ensemble])
    payload = {
        "n_paths": len(ensemble),
        "extinct_fraction": len(extinct) / len(ensemble),
        "mean_final_state": list(finals.mean(axis=0)),
        "reports": [r.to_json_dict() for r in reports],
    }
    passed = all(r.passed for r in reports)
    payload["pass"] = passed
    out.write_json("ensemble.json", payload)

    # Dense trajectories and jump logs for a few paths, re-simulated in one
    # batch from their recorded keys (bitwise identical to the ensemble
    # lanes).  About 400 rows per path keeps the CSV readable at any horizon.
    n_steps = int(round(exp.horizon / exp.dt))
    stride = max(1, n_steps // 400)
    demo_times = [k * exp.dt for k in range(0, n_steps + 1, stride)]
    demo = simulate_paths(
        exp.model,
        exp.horizon,
        exp.dt,
        [p.seed for p in ensemble[: min(10, len(ensemble))]],
        record_times=demo_times,
        log_jumps=True,
    )
    demo_rows, jump_rows = [], []
    for pi, dense in enumerate(demo):
        for k in range(dense.t_grid.shape[0]):
            demo_rows.append([pi, dense.t_grid[k]] + list(dense.states[k]))
        for (t, src, y) in dense.jumps:
            jump_rows.append([pi, t, src] + list(y))
    out.write_csv(
        "paths.csv",
        ["path", "t"] + [f"x_{j}" for j in range(exp.model.K)],
        demo_rows,
    )
    out.write_csv(
        "jumps.csv",
        ["path", "t", "source"] + [f"y_{j}" for j in range(exp.model.K)],
        jump_rows,
    )
    return passed


def _cmd_spine(exp: ExperimentSpec, out: _OutDir) -> bool:
    A, sd = _spectral_objects(exp)
    gen = spine.spine_generator(exp.model, sd)
    stat = spine.stationary_check(gen, sd)
    t_m2o = min(1.0, exp.horizon)
    m2o = spine.many_to_one_gap(
        exp.model,
        sd,
        gen,
        exp.f_test[0],
        t_m2o,
        0,
        exp.paths,
        int(_rng.derive_key(exp.base_seed, _STREAM_M2O)),
    )
    chain = spine.simulate_spine(
        gen, 0, exp.horizon, int(_rng.derive_key(exp.base_seed, _STREAM_CHAIN))
    )
    occ = spine.occupation_fractions(chain, exp.model.K)
    payload = {
        "q": list(gen.q),
        "kappa": [list(r) for r in gen.kappa],
        "G": [list(r) for r in gen.G],
        "stationary": stat.to_json_dict(),
        "many_to_one": m2o.to_json_dict(),
        "sample_chain_occupation": list(occ),
        "rho": list(sd.rho()),
    }
    passed = stat.passed and m2o.passed
    payload["pass"] = passed
    out.write_json("spine.json", payload)
    out.write_csv(
        "spine_path.csv",
        ["t_start", "t_end", "state"],
        [[t0, t1, int(s)] for t0, t1, s in chain],
    )
    return passed


def _cmd_lln(exp: ExperimentSpec, out: _OutDir) -> bool:
    _, sd = _spectral_objects(exp)
    times = _record_times(exp, exp.t_grid)
    ensemble = simulate_ensemble(
        exp.model,
        exp.horizon,
        exp.dt,
        exp.paths,
        int(_rng.derive_key(exp.base_seed, _STREAM_LLN)),
        record_times=times,
    )
    mart = diagnostics.martingale_report(ensemble, sd, exp.t_grid, p=exp.p)
    f_ones = (1.0,) * exp.model.K
    lln = diagnostics.lln_report(
        ensemble, sd, times, f_ones, ratio_tol=exp.lln_ratio_tol
    )
    payload = {
        "martingale": mart.to_json_dict(),
        "lln": lln.to_json_dict(),
    }
    passed = mart.passed and lln.passed
    payload["pass"] = passed
    out.write_json("lln.json", payload)

    traj = lln.metadata["_ratio_traj"]
    traj_t = lln.metadata["_traj_times"]
    rows = []
    for pi in range(traj.shape[0]):
        for k in range(traj.shape[1]):
            rows.append([pi, traj_t[k]] + list(traj[pi, k]))
    out.write_csv(
        "ratios.csv",
        ["path", "t"] + [f"ratio_{j}" for j in range(exp.model.K)],
        rows,
    )
    return passed


_RUNNERS = {
    "spectral": _cmd_spectral,
    "laplace": _cmd_laplace,
    "simulate": _cmd_simulate,
    "spine": _cmd_spine,
    "lln": _cmd_lln,
}


def run(exp: ExperimentSpec, command: str) -> int:
    """Execute one subcommand pipeline; returns the process exit status."""
    if command not in _COMMANDS:
        raise ValueError(f"unknown command: {command}")
    provenance = {
        "config_hash": exp.config_hash,
        "version": __version__,
        "defaults_applied": list(exp.defaults_applied),
    }
    out = _OutDir(exp.out_dir, provenance)
    names = list(_RUNNERS) if command == "all" else [command]
    ok = True
    for name in names:
        ok = _RUNNERS[name](exp, out) and ok
    out.write_manifest(command)
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="csbp",
        description="Multitype branching-process pipelines: exact spectral "
        "and semigroup objects, reproducible Monte Carlo, and closed-form "
        "cross-checks.",
    )
    parser.add_argument("command", choices=_COMMANDS)
    parser.add_argument("--config", required=True, help="TOML experiment file")
    parser.add_argument("--seed", type=int, default=None, help="override run.base_seed")
    parser.add_argument("--out", default=None, help="override run.out")
    parser.add_argument("--paths", type=int, default=None, help="override run.paths")
    parser.add_argument("--dt", type=float, default=None, help="override run.dt")
    args = parser.parse_args(argv)

    out_hint = args.out
    try:
        raw = _read_raw(args.config)
        run_section = raw.setdefault("run", {})
        if args.seed is not None:
            run_section["base_seed"] = args.seed
        if args.out is not None:
            run_section["out"] = args.out
        if args.paths is not None:
            run_section["paths"] = args.paths
        if args.dt is not None:
            run_section["dt"] = args.dt
        exp = _build(raw)
        out_hint = exp.out_dir
        return run(exp, args.command)
    except (CsbpError, OSError, ValueError) as e:
        sys.stderr.write(f"error: {type(e).__name__}: {e}\n")
        if out_hint:
            try:
                os.makedirs(out_hint, exist_ok=True)
                body = {
                    "error": {"type": type(e).__name__, "message": str(e)},
                    "version": __version__,
                }
                with open(os.path.join(out_hint, "error.json"), "w") as fh:
                    json.dump(body, fh, sort_keys=True, indent=2)
                    fh.write("\n")
            except OSError:
                pass
        return 2


if __name__ == "__main__":
    sys.exit(main())
