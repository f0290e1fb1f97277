"""Exception types shared across the package."""


class MultiobsError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(MultiobsError, ValueError):
    """Matrix dimensions are invalid or inconsistent."""


class InvalidStateError(MultiobsError, ValueError):
    """A matrix violates the density-matrix invariants."""


class StepSizeError(MultiobsError, ValueError):
    """A time step violates an integration guard."""


class ImpossibleJumpError(MultiobsError, ValueError):
    """A detection event was applied to a state that cannot produce it."""


class ModelError(MultiobsError, ValueError):
    """A model quantity (e.g. a detection rate) is inconsistent with a valid state."""


class AnalyticsError(MultiobsError, ValueError):
    """An estimator was queried outside its domain (unknown pair, too few samples...)."""


class ConfigError(MultiobsError, ValueError):
    """An experiment configuration failed validation.

    The message lists the offending fields.
    """
