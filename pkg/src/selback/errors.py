"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
DivergenceError -> 4.
"""


class SelbackError(Exception):
    """Base class for all package errors."""


class ConfigError(SelbackError):
    """Invalid or inconsistent configuration."""


class DataError(SelbackError):
    """Malformed, missing, or out-of-contract data."""


class DivergenceError(SelbackError):
    """Numerical divergence (non-finite loss) during optimization."""
