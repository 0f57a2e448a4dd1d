# byzsgd/errors.py

"""
Exception hierarchy shared by the library and the command-line harness.

Configuration problems map to exit code 1, estimator failures to exit code 2.
"""

from typing import Any, List


class ByzSGDError(Exception):
    """Base class for every error raised deliberately by byzsgd"""


class ConfigError(ByzSGDError, ValueError):
    """Invalid or unreadable run configuration"""


class FilterError(ByzSGDError, RuntimeError):
    """The robust gradient estimator could not produce an estimate"""


class FilterCollapsedError(FilterError):
    """Active set emptied, or reconstruction errors vanished above threshold"""


class InfeasibleFilterError(FilterError):
    """The capped column-stochastic constraint set is empty (|A| * cap < 1)"""


class TrainingAborted(FilterError):
    """A training run stopped on a filter failure; carries partial metrics"""

    def __init__(self, message: str, metrics: List[Any], cause: FilterError):
        super().__init__(message)
        self.metrics = metrics
        self.cause = cause
