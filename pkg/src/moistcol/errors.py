"""Exception types shared across the package."""


class MoistcolError(Exception):
    """Base class for all package errors."""


class ConfigError(MoistcolError, ValueError):
    """Rejected input: bad config values, out-of-domain arguments, oversize steps."""


class ModelError(ConfigError):
    """A saturation model failed its monotonicity validation."""


class SolverError(MoistcolError, RuntimeError):
    """The implicit inverse could not be bracketed or did not converge."""


class StepInvariantError(MoistcolError, RuntimeError):
    """A rearrangement step produced a state that violates the column invariants.

    The offending :class:`~moistcol.rearrange.StepReport` is attached as
    ``report`` so the event sequence can be inspected.
    """

    def __init__(self, message, report=None, step_index=None):
        super().__init__(message)
        self.report = report
        self.step_index = step_index


class EnsembleMemberError(MoistcolError, RuntimeError):
    """A member run of an ensemble failed; ``member`` is ``(profile, sigma)``."""

    def __init__(self, message, member):
        super().__init__(message)
        self.member = member
