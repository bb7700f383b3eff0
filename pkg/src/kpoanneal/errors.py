"""Exception hierarchy shared by all kpoanneal modules."""


class KpoError(Exception):
    """Base class for every error raised by this package."""


class InvalidDimensionError(KpoError, ValueError):
    """An operator or state has the wrong shape for the requested operation."""


class InvalidParameterError(KpoError, ValueError):
    """A physical parameter is outside its allowed domain."""


class TruncationError(KpoError, ValueError):
    """The Fock truncation is too small for the requested coherent amplitude."""

    def __init__(self, message: str, suggested_n_max: int):
        super().__init__(f"{message} (suggested n_max >= {suggested_n_max})")
        self.suggested_n_max = suggested_n_max


class ConvergenceError(KpoError, RuntimeError):
    """An iterative optimizer ran out of iterations.

    ``best`` holds the best iterate found before giving up.
    """

    def __init__(self, message: str, best=None, value: float | None = None):
        super().__init__(message)
        self.best = best
        self.value = value


class StiffnessError(KpoError, RuntimeError):
    """The adaptive integrator could not take a step larger than its minimum."""

    def __init__(self, message: str, t: float, h: float):
        super().__init__(f"{message} at t={t:.6g} (h={h:.3g})")
        self.t = t
        self.h = h


class IntegrityError(KpoError, RuntimeError):
    """A density-matrix invariant was violated far beyond tolerance."""


class NumericalConsistencyError(KpoError, RuntimeError):
    """A trajectory jump was triggered but no channel has positive weight."""


class ConfigError(KpoError, ValueError):
    """A configuration file failed validation.

    ``path`` is the dotted key path of the offending entry.
    """

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
