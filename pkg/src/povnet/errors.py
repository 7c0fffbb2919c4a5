"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, data-shaped errors
(parse, referential, range, ...) -> 3, ConvergenceError -> 4.
"""


class PovnetError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PovnetError):
    """Bad, missing, or inconsistent run configuration."""


class ParseError(PovnetError):
    """Malformed input file; carries the offending line and field."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if field is not None:
            loc.append(f"field '{field}'")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)


class ReferentialError(PovnetError):
    """A record references a spatial unit id missing from the hierarchy."""


class InvalidCoordinateError(PovnetError):
    """Latitude/longitude out of range or non-finite."""


class EmptyUnitError(PovnetError):
    """A coarse spatial unit contains no sites, so it has no centroid."""


class MatrixKindError(PovnetError):
    """Operation applied to the wrong matrix kind (raw vs normalized)."""


class DegenerateMatrixError(PovnetError):
    """Matrix has no meaningful leading eigenvector (e.g. all zeros)."""


class ConvergenceError(PovnetError):
    """Iterative solver failed to converge; carries the last residual."""

    def __init__(self, message: str, residual: float | None = None, iterations: int | None = None):
        self.residual = residual
        self.iterations = iterations
        if residual is not None:
            message = f"{message} (residual {residual:.3e} after {iterations} iterations)"
        super().__init__(message)


class UndefinedStatisticError(PovnetError):
    """Statistic undefined for the input (e.g. correlation of a constant)."""


class InsufficientDataError(PovnetError):
    """Too few joined observations to fit or test."""


class FeatureMismatchError(PovnetError):
    """Score vector's measure does not match the model's feature."""


class EmptySampleError(PovnetError):
    """A filtering step left zero usable records."""
