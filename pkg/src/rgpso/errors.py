class RgpsoError(Exception):
    """Base class for package errors."""


class DimensionError(RgpsoError, ValueError):
    pass


class DomainError(RgpsoError, ValueError):
    pass


class DegenerateWeightsError(RgpsoError):
    """All Gaussian sample weights vanished."""


class InsufficientDataError(RgpsoError):
    """Too few archived samples for a regression estimate."""


class ZeroGradientError(RgpsoError, ValueError):
    pass


class TopologyError(RgpsoError, ValueError):
    pass


class IngestionError(RgpsoError, ValueError):
    pass


class ConfigError(RgpsoError, ValueError):
    pass


class EvaluationFailed(RgpsoError):
    """An objective evaluation raised inside the swarm loop."""
