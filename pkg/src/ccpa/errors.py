class InfeasibleError(Exception):
    """A requested target or allocation cannot be met.

    ``where`` optionally names the failing (user, k) pair.
    """

    def __init__(self, msg, where=None):
        super().__init__(msg)
        self.where = where


class SolverError(RuntimeError):
    """Numerical failure inside an optimization routine."""


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""

    def __init__(self, msg, field=None):
        super().__init__(msg)
        self.field = field
