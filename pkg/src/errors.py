"""
Exception hierarchy for chainlab.
The CLI maps ConfigError to exit code 2 and every other ChainlabError to 1.
"""

from typing import Any, Optional


class ChainlabError(Exception):
    """Base class for all failures raised by chainlab modules."""


class ConfigError(ChainlabError):
    """Schema violation in an experiment configuration."""

    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


class AssumptionError(ChainlabError):
    """The potential or pressure violates the structural assumptions."""


class ConvergenceError(ChainlabError):
    """An iterative solver stopped without meeting its tolerance."""

    def __init__(self, message: str, last_iterate: Optional[Any] = None, iterations: int = 0):
        self.last_iterate = last_iterate
        self.iterations = iterations
        super().__init__(message)


class GridError(ChainlabError):
    """Discretisation too small, tail criterion unmet or point outside the grid hull."""


class SpectralError(ChainlabError):
    """Power iteration failure or collapse of the spectral gap."""


class SamplerError(ChainlabError):
    """Monte Carlo run could not be tuned to a usable acceptance rate."""


class InconsistencyError(ChainlabError):
    """Two formulas for the same quantity disagree beyond tolerance."""
