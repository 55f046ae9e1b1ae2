"""Exception hierarchy.

Each error class carries the CLI exit code used when it escapes a subcommand.
"""


class NSIError(Exception):
    """Base class for all package errors."""

    exit_code = 1
    kind = "internal"


class ConfigError(NSIError):
    exit_code = 2
    kind = "config"


class RoleError(ConfigError):
    """A role refers to a column that does not exist, or roles overlap."""

    kind = "role"


class SchemaError(ConfigError):
    kind = "schema"


class DataValidationError(NSIError):
    exit_code = 3
    kind = "validation"


class DegenerateDataError(DataValidationError):
    kind = "degenerate_data"


class InsufficientDataError(DataValidationError):
    kind = "insufficient_data"


class NumericalError(NSIError):
    """A linear system could not be solved even after regularization."""

    kind = "numerical"


class RankError(NumericalError):
    kind = "rank"


class WeakInstrumentError(NumericalError):
    kind = "weak_instrument"


class StandardizationError(DataValidationError):
    kind = "standardization"
