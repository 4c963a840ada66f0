"""Exception types raised across formanflow."""


class FormanFlowError(Exception):
    """Base class for all package errors."""


class StructuralError(FormanFlowError):
    """Dangling or malformed incidence in a complex description."""


class OrientationError(FormanFlowError):
    """Relative orientations fail the boundary-of-boundary or compatibility checks."""


class DegeneracyError(FormanFlowError):
    """A cell has (numerically) zero measure."""


class TopologyError(FormanFlowError):
    """Complex is not quasi-cubical (non-simple polyhedron vertex)."""


class ValidationError(FormanFlowError, ValueError):
    """Invalid argument or physically inadmissible input."""


class FormatError(FormanFlowError):
    """Malformed input file."""

    def __init__(self, message, line=None, path=None):
        if path is not None:
            loc = f"{path}:{line}" if line is not None else f"{path}"
        else:
            loc = f"line {line}" if line is not None else ""
        super().__init__(f"{loc}: {message}" if loc else message)
        self.line = line
        self.path = path


class NumericError(FormanFlowError):
    """Linear solver breakdown or residual above tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SingularSystemError(NumericError):
    """Reduced system has an unanchored (constant) null space."""


class CapacityError(FormanFlowError):
    """Not enough cells to place the requested features."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class ConfigError(ValidationError):
    """Invalid run configuration."""
