"""Exception hierarchy shared across the package."""


class ClickRefineError(Exception):
    """Base class for all package errors."""


class InvalidGeometryError(ClickRefineError, ValueError):
    """A box or distance tuple violates its invariants."""


class PointOutsideBoxError(ClickRefineError, ValueError):
    """A point is outside (or on the boundary of) the box it must be inside."""


class DegenerateRegionError(ClickRefineError, ValueError):
    """A derived region collapsed to zero extent."""


class VocabularyError(ClickRefineError, KeyError):
    """Category token not present in the configured vocabulary."""


class RefinementFailedError(ClickRefineError, RuntimeError):
    """Refinement produced no usable box."""


class NumericError(ClickRefineError, ArithmeticError):
    """Non-finite value encountered in a numeric computation."""


class CheckpointError(ClickRefineError, ValueError):
    """Checkpoint directory is missing, corrupt, or incompatible."""


class InputError(ClickRefineError, ValueError):
    """Malformed input to an operation (sizes, lengths, ranges)."""


class TrackerInitError(ClickRefineError, ValueError):
    """Tracker could not be initialized from the given box."""
