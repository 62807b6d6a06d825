"""Exception types shared across the package."""


class DimensionError(ValueError):
    """An operand does not conform to the shape an operation requires."""


class KernelError(RuntimeError):
    """A numerical kernel produced output that signals an internal bug."""


class DivergenceError(RuntimeError):
    """The primal-dual iterate left the finite/bounded region.

    Attributes
    ----------
    state : the last iterate known to be finite (may be ``None``).
    iterate : the offending iterate, as a dict of arrays, for post-mortem.
    """

    def __init__(self, message, state=None, iterate=None):
        super().__init__(message)
        self.state = state
        self.iterate = iterate


class PersistenceError(RuntimeError):
    """Input data failed the persistency-of-excitation rank test."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class GenerationError(RuntimeError):
    """A random system could not be generated with the requested properties."""


class ConfigError(ValueError):
    """Invalid, unknown or missing configuration key."""
