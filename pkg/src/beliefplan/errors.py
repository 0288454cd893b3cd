"""Shared exception types.

Exit-code mapping used by the CLI: config errors -> 2, numerical errors -> 3,
integrity/version errors -> 4. Everything else is a plain failure (1).
"""


class BeliefPlanError(Exception):
    """Base class for all package errors."""


class ConfigError(BeliefPlanError):
    """Invalid configuration value or malformed config file."""

    exit_code = 2


class DimensionError(ConfigError):
    """Array shape does not match the declared layer/contract dimensions."""


class ArgumentError(BeliefPlanError):
    """Invalid argument to an operation (empty sequence, bad id, ...)."""

    exit_code = 2


class NumericalError(BeliefPlanError):
    """Non-finite value encountered during a numeric computation."""

    exit_code = 3


class IntegrityError(BeliefPlanError):
    """Checkpoint manifest/blob inconsistency."""

    exit_code = 4


class VersionError(IntegrityError):
    """Checkpoint written by an incompatible format version."""


class ModeError(BeliefPlanError):
    """Operation invoked outside its supported mode (e.g. white-box only)."""

    exit_code = 2


class UnidentifiableError(BeliefPlanError):
    """Excitation absent: the requested identification bound does not exist."""

    exit_code = 3
