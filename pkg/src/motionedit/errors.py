"""Exception types shared across the package."""


class MotionEditError(Exception):
    """Base class for all package errors."""


class InputError(MotionEditError, ValueError):
    """An argument violates an operation's precondition."""


class ValidationError(InputError):
    """A data object violates one of its invariants."""


class FormatError(MotionEditError, ValueError):
    """A file does not conform to its expected schema."""


class LayoutError(MotionEditError, ValueError):
    """Motion dimensions disagree with the feature layout."""


class ConfigurationError(MotionEditError, ValueError):
    """An invalid or unsupported configuration was requested."""


class ConsistencyError(MotionEditError, ValueError):
    """Two related inputs disagree (e.g. a manifest id without a curve)."""


class CapacityError(MotionEditError, ValueError):
    """A sequence exceeds the model's maximum length."""


class CheckpointError(MotionEditError, ValueError):
    """A checkpoint cannot be loaded into the requested configuration."""


class SingularityError(MotionEditError, ArithmeticError):
    """An inversion is undefined at the requested point."""


class NumericalError(MotionEditError, ArithmeticError):
    """A numerical routine failed to produce a finite result."""
