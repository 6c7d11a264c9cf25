"""Error taxonomy shared across the package.

Exit-code mapping for the CLI: usage/config problems -> 1, bad or missing
data artifacts -> 2, numeric failures (non-finite losses, failed gradient
checks) -> 3.
"""


class OpsumError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(OpsumError):
    """Invalid configuration or command usage."""

    exit_code = 1


class DataError(OpsumError):
    """Missing, malformed, or inconsistent data artifacts."""

    exit_code = 2


class NumericError(OpsumError):
    """Numeric failure during training or checking."""

    exit_code = 3


class ShapeError(NumericError):
    """Operands with incompatible shapes reached a tensor op."""

