"""Exception hierarchy.

Everything numerical derives from :class:`NumericalError` so the CLI can map
it to a single exit code.
"""


class ConfigError(ValueError):
    """Invalid experiment configuration or model document."""


class NumericalError(RuntimeError):
    """A computation produced an unusable result (singularity, non-finite value)."""


class WeightDegeneracyError(NumericalError):
    """Every particle received zero likelihood for the current observation."""


class QuadratureError(NumericalError):
    """A refinement loop failed to converge.

    ``trace`` holds the successive estimates so callers can judge how far off
    the integral was.
    """

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class FilterError(NumericalError):
    """A particle filter step failed; ``t`` is the offending time index."""

    def __init__(self, message, t):
        super().__init__(f"t={t}: {message}")
        self.t = t
