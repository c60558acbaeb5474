"""Exception hierarchy shared across the package."""


class CsbpError(Exception):
    """Base class for all errors raised by this package."""


class IrreducibilityError(CsbpError):
    """The directed graph of positive off-diagonal entries is not strongly
    connected, so the Perron-Frobenius eigenvalue need not be simple."""


class ConvergenceError(CsbpError):
    """An eigensolver or iterative routine failed to meet its residual target."""


class StepError(CsbpError):
    """Step-halving disagreement of the ODE solver exceeded tolerance;
    the step size is too large for the requested problem."""


class NoConvergence(CsbpError):
    """Picard iteration exhausted its iteration budget."""


class QuadratureError(CsbpError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class ConfigError(CsbpError):
    """A run parameter is inconsistent with the model (e.g. dt too large)."""


class ParseError(CsbpError):
    """The config file is not syntactically valid."""


class SchemaError(CsbpError):
    """The config file parsed but violates the schema (unknown or bad keys)."""


class DegenerateError(CsbpError):
    """Too few surviving paths for the requested statistic."""
