"""Exception hierarchy shared by every module."""


class AutoMTLError(Exception):
    """Base class for all errors raised by automtl."""


class DimensionMismatch(AutoMTLError, ValueError):
    pass


class SliceOutOfRange(AutoMTLError, IndexError):
    pass


class LabelOutOfRange(AutoMTLError, IndexError):
    pass


class ZeroVector(AutoMTLError, ValueError):
    pass


class NonFiniteValue(AutoMTLError, FloatingPointError):
    pass


class NotScalar(AutoMTLError, ValueError):
    pass


class DetachedLoss(AutoMTLError, RuntimeError):
    pass


class EmptySequence(AutoMTLError, ValueError):
    pass


class EpochOutOfRange(AutoMTLError, ValueError):
    pass


class NonFiniteGradient(AutoMTLError, FloatingPointError):
    pass


class NoLoss(AutoMTLError, ValueError):
    pass


class SpecMismatch(AutoMTLError, ValueError):
    pass


class MissingTarget(AutoMTLError, KeyError):
    pass


class TooShort(AutoMTLError, ValueError):
    pass


class CharOutOfCharset(AutoMTLError, ValueError):
    pass


class NoEligibleToken(AutoMTLError, ValueError):
    pass


class UnknownLabel(AutoMTLError, KeyError):
    pass


class MalformedHeader(AutoMTLError, ValueError):
    pass


class DuplicateToken(AutoMTLError, ValueError):
    pass


class BadRatios(AutoMTLError, ValueError):
    pass


class EmptyDataset(AutoMTLError, ValueError):
    pass


class EmptySplit(AutoMTLError, ValueError):
    pass


class ConfigError(AutoMTLError, ValueError):
    pass


class NonFiniteLoss(AutoMTLError, FloatingPointError):
    def __init__(self, epoch, batch, message=None):
        self.epoch = epoch
        self.batch = batch
        super().__init__(message or f"non-finite loss at epoch {epoch}, batch {batch}")


class Dropped(AutoMTLError):
    """Signal that a document was removed during cleaning; carries the reason."""

    def __init__(self, reason):
        self.reason = reason
        super().__init__(reason)
