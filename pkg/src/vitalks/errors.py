"""Exception types shared across the package.

The CLI maps these onto exit codes: artifact problems exit 2, validation
problems exit 3.  Library callers can catch the base class.
"""

from __future__ import annotations


class VitalksError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(VitalksError, ValueError):
    """An operation received arguments outside its contract."""


class ConfigurationError(VitalksError, ValueError):
    """A configuration value or combination is not usable."""


class DataError(VitalksError, ValueError):
    """Input data violates the documented file or schema contract."""


class StreamError(VitalksError, ValueError):
    """A streaming update does not fit the monitor state it was sent to."""


class TrainingError(VitalksError, RuntimeError):
    """Optimization produced a non-finite or otherwise unusable state."""


class FitError(VitalksError, ValueError):
    """A classifier cannot be fitted on the supplied data."""


class ArtifactError(VitalksError):
    """An artifact file is missing, malformed, or has the wrong version."""
