"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, SchemaError and
GeometryError -> 2, NumericError -> 3.
"""


class HiergeoError(Exception):
    """Base class for all package errors."""


class ConfigError(HiergeoError):
    """Invalid configuration value or infeasible setup."""


class SchemaError(HiergeoError):
    """Malformed input data (files, records, label ranges)."""


class GeometryError(HiergeoError):
    """Invalid or degenerate geometry, orphan regions."""


class DimensionError(HiergeoError):
    """Shape mismatch between tensors or vectors."""


class NumericError(HiergeoError):
    """Non-finite values or failed numeric checks."""


class GuardError(HiergeoError):
    """Test-split labels were read while locked during training."""
