"""Multitype continuous-state branching processes.

Exact spectral and semigroup objects for K-type branching models with
diffusion and jumps, a reproducible counter-seeded simulator, the tilted
spine chain, and statistical diagnostics that test every Monte Carlo
estimate against an independent closed-form route.
"""

from .config import ExperimentSpec, load_config
from .diagnostics import (
    jump_rate_report,
    laplace_report,
    lln_report,
    martingale_report,
    variance_report,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    CsbpError,
    DegenerateError,
    IrreducibilityError,
    NoConvergence,
    ParseError,
    QuadratureError,
    SchemaError,
    StepError,
)
from .model import (
    FiniteAtoms,
    JumpMeasure,
    ModelConfig,
    PowerLaw,
    check_moment_conditions,
    evaluate_psi,
    make_psi,
    psi_vector,
    validate_model,
)
from .reports import Report
from .semigroup import OdeSolution, mean_via_picard, second_moment, solve_log_laplace
from .simulator import PathRecord, simulate_ensemble, simulate_path, simulate_paths
from .spectral import (
    SpectralData,
    drift_matrix,
    mean_matrix,
    mixing_profile,
    perron_frobenius,
    tilde_p,
)
from .spine import (
    SpineGenerator,
    many_to_one_gap,
    occupation_fractions,
    simulate_spine,
    spine_generator,
    stationary_check,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "ExperimentSpec",
    "load_config",
    "CsbpError",
    "IrreducibilityError",
    "ConvergenceError",
    "StepError",
    "NoConvergence",
    "QuadratureError",
    "ConfigError",
    "ParseError",
    "SchemaError",
    "DegenerateError",
    "FiniteAtoms",
    "PowerLaw",
    "JumpMeasure",
    "ModelConfig",
    "validate_model",
    "evaluate_psi",
    "psi_vector",
    "make_psi",
    "check_moment_conditions",
    "SpectralData",
    "drift_matrix",
    "perron_frobenius",
    "mean_matrix",
    "tilde_p",
    "mixing_profile",
    "OdeSolution",
    "solve_log_laplace",
    "mean_via_picard",
    "second_moment",
    "PathRecord",
    "simulate_path",
    "simulate_ensemble",
    "simulate_paths",
    "SpineGenerator",
    "spine_generator",
    "simulate_spine",
    "occupation_fractions",
    "many_to_one_gap",
    "stationary_check",
    "Report",
    "martingale_report",
    "lln_report",
    "variance_report",
    "laplace_report",
    "jump_rate_report",
]
