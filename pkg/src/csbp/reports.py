"""Uniform result record for statistical and exact checks.

Every diagnostic in the package returns a Report: a named estimate, its
standard error, the closed-form oracle it was tested against, and a pass
flag.  The flag is always recomputable from the stored fields via
recompute_pass, so serialized reports can be re-audited without rerunning
anything.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["Report"]


def _f(x):
    """Convert numpy scalars and arrays to plain Python for JSON."""
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return [_f(v) for v in x.tolist()]
    if isinstance(x, (list, tuple)):
        return [_f(v) for v in x]
    if isinstance(x, dict):
        return {k: _f(v) for k, v in x.items()}
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def _within(est, oracle, se, atol) -> bool:
    return abs(est - oracle) <= 3.0 * se + atol


@dataclass(frozen=True)
class Report:
    """One check: estimate vs oracle with a three-standard-error band.

    metadata carries whatever the producing diagnostic needs to make the
    pass rule auditable; the key "rule" selects how recompute_pass reads
    the fields, and "atol" (default 0) is an absolute slack added to the
    3 SE band.  Keys starting with an underscore are in-process payloads
    (trajectory arrays and the like) and are dropped on serialization.
    """

    name: str
    estimate: float
    std_error: float
    oracle: float | None
    n_samples: int
    passed: bool
    metadata: dict = field(default_factory=dict)

    def recompute_pass(self) -> bool:
        md = self.metadata
        rule = md.get("rule", "3se")
        atol = float(md.get("atol", 0.0))
        if rule == "3se":
            if self.oracle is None:
                return self.passed
            return _within(self.estimate, self.oracle, self.std_error, atol)
        if rule == "finite":
            return math.isfinite(self.estimate)
        if rule == "max-resid":
            return self.estimate <= float(md["threshold"])
        if rule == "multi-3se":
            ests = md["estimates"]
            ses = md["std_errors"]
            oras = md["oracles"]
            return all(
                _within(e, o, s, atol) for e, s, o in zip(ests, ses, oras)
            )
        if rule == "stationary":
            return (
                self.estimate <= float(md["threshold"])
                and float(md["resid_semigroup"]) <= float(md["semigroup_tol"])
            )
        if rule == "many-to-one":
            exact_ok = float(md["exact_gap"]) <= float(md["exact_tol"])
            mc_ok = _within(self.estimate, self.oracle, self.std_error, atol)
            return exact_ok and mc_ok
        if rule == "lln":
            slope_ok = _within(self.estimate, self.oracle, self.std_error, atol)
            meds = md["ratio_median"]
            oras = md["ratio_oracle"]
            tol = float(md["ratio_tol"])
            ratio_ok = all(
                abs(m - o) <= tol * max(abs(o), 1e-12)
                for m, o in zip(meds, oras)
            )
            return slope_ok and ratio_ok
        raise ValueError(f"unknown pass rule: {rule!r}")

    def to_json_dict(self) -> dict:
        md = {k: _f(v) for k, v in self.metadata.items() if not k.startswith("_")}
        return {
            "name": self.name,
            "estimate": _f(self.estimate),
            "std_error": _f(self.std_error),
            "oracle": _f(self.oracle),
            "n_samples": int(self.n_samples),
            "pass": bool(self.passed),
            "metadata": md,
        }
