"""Exception types and process exit codes shared across the package."""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_INFEASIBLE = 4


class ConfigError(ValueError):
    """Invalid or inconsistent configuration input."""


class NumericError(RuntimeError):
    """A numerical routine failed (factorization, eigensolve, degeneracy)."""


class DegenerateSpectrumError(NumericError):
    """An operation required a strictly positive spectral gap and found none."""


class InfeasiblePlanError(RuntimeError):
    """The requested accuracy plan has an empty admissible parameter set."""
