"""Exception hierarchy shared by all modules."""


class NeriError(Exception):
    """Base class for every error raised by :mod:`nerimf`."""


class InvalidMeasureError(NeriError, ValueError):
    pass


class DomainError(NeriError, ValueError):
    """Argument outside the domain of a numerical evaluator (e.g. non-finite t)."""


class GeometryError(NeriError, ValueError):
    pass


class ConstraintError(NeriError, ValueError):
    """A field violates the boundary condition or the zero-mean constraint."""


class IncompatibleDataError(NeriError, ValueError):
    """Right-hand side not in the range of the operator (torus with non-zero mean)."""


class SolverError(NeriError, RuntimeError):
    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class BifurcationSuspected(SolverError):
    """Krylov stagnation on the linearised operator: the Hessian looks singular."""


class GeometryViolated(NeriError, RuntimeError):
    """The mountain-pass geometry does not hold for the given data."""


class ResolutionError(NeriError, ValueError):
    """A requested feature is below the resolvable mesh scale."""


class ConfigError(NeriError, ValueError):
    def __init__(self, message, field=None, line=None):
        where = []
        if field is not None:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
        self.field = field
        self.line = line
