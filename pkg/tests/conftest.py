"""Shared fixtures.

The reference two-type model reappears across the unit tests and carries
the whole acceptance suite, so its spectral data and the expensive long
ensemble are built once per session.  Ensemble base seeds are fixed up
front (0 for the long run, 1 and 2 for the short ones) and never chosen
by looking at results.
"""

import numpy as np
import pytest

from csbp import (
    FiniteAtoms,
    ModelConfig,
    drift_matrix,
    perron_frobenius,
    simulate_ensemble,
)


def reference_model(mu0=(1.0, 1.0)) -> ModelConfig:
    """Two supercritical types, one finite-atom jump source per type."""
    return ModelConfig(
        K=2,
        a=(-0.5, -0.2),
        b=(0.3, 0.3),
        eta=((0.0, 0.3), (0.1, 0.0)),
        gamma_measures=(
            FiniteAtoms(((0.2, (0.5, 0.5)),)),
            FiniteAtoms(((0.2, (0.3, 0.4)),)),
        ),
        mu0=mu0,
    )


@pytest.fixture(scope="session")
def ref_cfg():
    return reference_model()


@pytest.fixture(scope="session")
def ref_spec(ref_cfg):
    return perron_frobenius(drift_matrix(ref_cfg))


@pytest.fixture(scope="session")
def timings():
    """Wall-clock seconds per acceptance criterion, for the budget checks."""
    return {}


@pytest.fixture(scope="session")
def long_run(ref_cfg, timings):
    """T=20 ensemble shared by the martingale and LLN acceptance checks.

    Returns (ensemble, record_times).  Build time is logged under
    'long_run' so both consumers can charge it to their budgets.
    """
    import time

    times = sorted(set(np.arange(0.5, 20.0, 0.5).tolist()) | {1.0, 5.0, 10.0, 20.0})
    t0 = time.perf_counter()
    ens = simulate_ensemble(ref_cfg, 20.0, 0.005, 10_000, 0, record_times=times)
    timings["long_run"] = time.perf_counter() - t0
    return ens, times
