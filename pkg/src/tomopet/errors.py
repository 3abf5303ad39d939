"""Exception hierarchy shared by all tomopet modules."""


class TomopetError(Exception):
    """Base class for all tomopet errors."""


class ValidationError(TomopetError):
    """Invalid argument values or violated type invariants."""


class FormatError(TomopetError):
    """Malformed or unrecognized file content."""


class DataError(TomopetError):
    """Inconsistent data passed between pipeline stages."""


class SimulationError(TomopetError):
    """Monte Carlo generation could not complete (e.g. impossible geometry)."""
