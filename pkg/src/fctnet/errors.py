"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor shapes are inconsistent for the requested operation."""


class NumericsError(FloatingPointError):
    """A numerical invariant was violated (NaN/Inf, zero divisor, failed check)."""


class ValidationError(ValueError):
    """A config, dataset, or checkpoint failed validation."""


class UsageError(ValueError):
    """The command line or a config file was malformed (unknown keys, bad flags)."""
