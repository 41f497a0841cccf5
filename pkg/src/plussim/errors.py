"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where a formula is defined."""


class SolverError(RuntimeError):
    """An iterative solver failed to converge."""


class PolarTableError(ValueError):
    """A polar table file could not be parsed or validated."""


class NonOscillatoryError(ValueError):
    """The Phugoid radicand is negative, so the mode has no real frequency."""


class SimulationDiverged(RuntimeError):
    """A state component exceeded the configured divergence bound."""

    def __init__(self, message, step=None, time=None, state=None):
        super().__init__(message)
        self.step = step
        self.time = time
        self.state = state


class ConfigError(ValueError):
    """Invalid run configuration. ``line`` points into the source text when known."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = ""
        if field is not None:
            where += f"[{field}] "
        if line is not None:
            where = f"line {line}: " + where
        super().__init__(where + message)
