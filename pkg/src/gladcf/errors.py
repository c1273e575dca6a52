"""Exception types shared across the package."""

from __future__ import annotations


class GladcfError(Exception):
    """Base class for all package-specific errors."""


class SizeError(GladcfError, ValueError):
    """A graph or matrix does not fit the requested dimensions."""


class ConfigError(GladcfError, ValueError):
    """An invalid configuration value or combination."""


class TuFormatError(GladcfError, ValueError):
    """A malformed line or inconsistent record in a TU-format file."""


class MetricError(GladcfError, ValueError):
    """A metric is undefined for the given inputs (e.g. single-class AUC)."""


class TrainingDivergedError(GladcfError, RuntimeError):
    """A loss or parameter became non-finite during optimization."""
