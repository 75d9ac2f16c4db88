"""Exception types raised by the toolkit.

Every error that callers are expected to catch derives from WssegError so the
CLI can map any of them to a data-error exit code.
"""


class WssegError(Exception):
    """Base class for all toolkit errors."""


class BadMagicError(WssegError):
    """Stack file does not start with the WSAS magic bytes."""


class TruncatedTensorError(WssegError):
    """Stack file payload is shorter or longer than the header promises."""


class DimensionOverflowError(WssegError):
    """A tensor dimension is zero or exceeds 65535."""


class IoFailureError(WssegError):
    """Underlying file I/O failed."""


class IdRequiredError(WssegError):
    """Stack has an empty image id; manifest keys must be non-empty."""


class UnknownColorError(WssegError):
    """Mask PNG uses a palette entry that matches no taxonomy class."""


class NonFiniteInputError(WssegError):
    """Input array contains NaN or infinity."""


class DimensionMismatchError(WssegError):
    """Arrays that must share dimensions do not."""


class SingleClassError(WssegError):
    """Operation needs at least two class maps."""


class StochasticityViolationError(WssegError):
    """Transition matrix rows do not sum to one within tolerance."""


class EmptyCollectionError(WssegError):
    """Operation needs at least one image/stack/mask."""


class MissingGroundTruthError(WssegError):
    """An image in the collection lacks a ground-truth mask."""


class MissingAuxiliaryInputError(WssegError):
    """Pipeline spec needs an auxiliary input (boundary map, RGB image, ...) not present in the manifest."""
