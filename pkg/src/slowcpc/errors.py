"""Exception hierarchy shared across the package."""


class SlowCPCError(Exception):
    """Base class for all package errors."""


# audio / data ingestion
class NotRiff(SlowCPCError):
    pass


class UnsupportedFormat(SlowCPCError):
    pass


class BadRate(SlowCPCError):
    pass


class ParseError(SlowCPCError):
    pass


class MissingFile(SlowCPCError):
    pass


class OverlapError(SlowCPCError):
    pass


class NoEligibleUtterance(SlowCPCError):
    pass


# augmentation
class SilentSignal(SlowCPCError):
    pass


class EmptyNoiseCache(SlowCPCError):
    pass


# model / checkpoints
class ShapeError(SlowCPCError):
    pass


class CorruptCheckpoint(SlowCPCError):
    pass


class ConfigMismatch(SlowCPCError):
    pass


# losses / training
class DegenerateRange(SlowCPCError):
    pass


class NonFiniteGradient(SlowCPCError):
    pass


# evaluation
class NoValidCells(SlowCPCError):
    pass


class SingleClass(SlowCPCError):
    pass


class LengthMismatch(SlowCPCError):
    pass


class CorruptFeatureFile(SlowCPCError):
    pass
