class QSchedError(Exception):
    pass


class ConfigError(QSchedError, ValueError):
    """Invalid model or scenario configuration."""


class DomainError(QSchedError, ValueError):
    """Argument outside an operation's domain."""


class PolicyError(QSchedError, RuntimeError):
    """A policy produced unusable weights or its internal search failed."""

    def __init__(self, message, slot=None, best_residual=None):
        super().__init__(message)
        self.slot = slot
        self.best_residual = best_residual


class GridConstructionError(QSchedError, RuntimeError):
    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell
