"""Exception hierarchy shared by every srdo module."""


class SrdoError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(SrdoError, ValueError):
    pass


class RankDeficientError(SrdoError, ValueError):
    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class ConvergenceError(SrdoError, RuntimeError):
    """Iterative routine ran out of iterations; ``best`` holds the last estimate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class SchemeError(SrdoError, ValueError):
    def __init__(self, message, subset=None):
        super().__init__(message)
        self.subset = subset


class DecodeError(SrdoError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class GraphError(SrdoError, ValueError):
    pass


class DivergenceError(SrdoError, FloatingPointError):
    """The run blew up at iteration ``k`` (non-finite iterate or AE over the limit)."""

    def __init__(self, k, ae, trace=None, reason="non-finite iterate"):
        super().__init__(f"{reason} at k={k} (AE={ae:.6g})")
        self.k = k
        self.ae = ae
        self.trace = trace


class ConfigError(SrdoError, ValueError):
    def __init__(self, message, line=None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
