"""Exception types shared across the package."""


class FracDGError(Exception):
    """Base class for package errors."""


class DegenerateRegionError(FracDGError, ValueError):
    """A region contains too few lattice cells for the requested quantity."""


class SingularityError(FracDGError, ValueError):
    """A kernel was evaluated on coincident points."""


class DivergentTailError(FracDGError, ValueError):
    """An exterior extension grows too fast for the weighted tail space."""


class UnsupportedOperationError(FracDGError, ValueError):
    """The operation is not defined for the given variant (e.g. f for a jump potential)."""


class DivergenceError(FracDGError, RuntimeError):
    """A numerical procedure detected unbounded behaviour."""


class HypothesisError(FracDGError, ValueError):
    """Inputs violate the hypotheses of the audited statement."""


class ConfigError(FracDGError, ValueError):
    """An experiment configuration could not be parsed or validated."""
