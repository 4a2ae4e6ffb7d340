"""Exception types raised across the package.

Every error derives from :class:`DacAlnsError` so callers can catch the whole
family; parse errors additionally derive from :class:`ValueError`.
"""


class DacAlnsError(Exception):
    pass


# instance parsing
class ParseError(DacAlnsError, ValueError):
    pass


class MissingSection(ParseError):
    pass


class MissingHeader(ParseError):
    pass


class DimensionMismatch(ParseError):
    pass


class NonNumericField(ParseError):
    pass


class RowArityMismatch(ParseError):
    pass


class InvertedTimeWindow(ParseError):
    pass


class DemandExceedsCapacity(ParseError):
    pass


class UnsupportedFormat(ParseError):
    pass


class SampleTooLarge(DacAlnsError, ValueError):
    pass


# routing
class UnknownCustomer(DacAlnsError, KeyError):
    pass


class PositionOutOfRange(DacAlnsError, IndexError):
    pass


class InfeasibleApplication(DacAlnsError):
    pass


class NotServed(DacAlnsError):
    pass


class UnservableCustomer(DacAlnsError):
    pass


class NothingToRemove(DacAlnsError):
    pass


class NoFeasibleInsertion(DacAlnsError):
    pass


# search engine
class AllZeroWeights(DacAlnsError, ValueError):
    pass


class NegativeWeight(DacAlnsError, ValueError):
    pass


class LengthMismatch(DacAlnsError, ValueError):
    pass


class NonpositiveTemperature(DacAlnsError, ValueError):
    pass


# neural core / encoder
class ShapeMismatch(DacAlnsError, ValueError):
    pass


class NonFiniteInput(DacAlnsError, ValueError):
    pass


class GraphNotRecorded(DacAlnsError, RuntimeError):
    pass


class KindMismatch(DacAlnsError, ValueError):
    pass


class EmptyGraph(DacAlnsError, ValueError):
    pass


class BadContext(DacAlnsError, ValueError):
    pass


# agent
class NonpositiveCost(DacAlnsError, ValueError):
    pass


class BadOperatorId(DacAlnsError, ValueError):
    pass


class CheckpointMismatch(DacAlnsError, ValueError):
    pass


class VersionMismatch(DacAlnsError, ValueError):
    pass


class CorruptCheckpoint(DacAlnsError, ValueError):
    pass


# statistics
class NonpositiveReference(DacAlnsError, ValueError):
    pass


class AllZeroDifferences(DacAlnsError, ValueError):
    def __init__(self, message: str, ties: int = 0):
        super().__init__(message)
        self.ties = ties


class ConfigError(DacAlnsError, ValueError):
    """Config file is unreadable or sets unknown / invalid constants."""
