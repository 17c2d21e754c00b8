"""Exception types shared across the package.

All library errors derive from :class:`Error` so callers (and the CLI) can
separate expected validation failures from genuine runtime faults.
"""


class Error(Exception):
    """Base class for all patchcontrast errors."""


class ConfigError(Error):
    """Invalid configuration values (dimensions, fractions, missing classes)."""


class FormatError(Error):
    """Malformed on-disk corpus or checkpoint data."""


class ShapeError(Error):
    """Tensor shape mismatch; message lists expected vs actual."""


class ParameterError(Error):
    """Scalar parameter outside its valid domain."""


class GeometryError(Error):
    """Source patch too small for the requested geometric transform."""


class StatsError(Error):
    """Not enough elements to compute batch statistics."""


class OptimError(Error):
    """Optimizer fault, e.g. a non-finite gradient; message names the tensor."""


class TrainingError(Error):
    """Unrecoverable fault during a training run (non-finite loss, bad resume)."""
