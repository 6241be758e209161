"""Exception types raised across the package."""


class LightvarError(Exception):
    """Base class for all package errors."""

    category = "error"


class InvalidProfileError(LightvarError, ValueError):
    category = "invalid-profile"


class BelowThresholdError(LightvarError, ValueError):
    """CAPE is below the value where the flash-rate bracket turns positive.

    Callers are expected to screen such columns out before assimilation.
    """

    category = "below-threshold"


class DegenerateDirectionError(LightvarError, ValueError):
    category = "degenerate-direction"


class ShapeMismatchError(LightvarError, ValueError):
    category = "shape-mismatch"


class NonFiniteCostError(LightvarError, FloatingPointError):
    category = "non-finite-cost"


class InsufficientSamplesError(LightvarError, ValueError):
    category = "insufficient-samples"


class ConfigError(LightvarError, ValueError):
    category = "invalid-config"


class FileFormatError(LightvarError, ValueError):
    category = "invalid-file"
