"""Exception hierarchy shared by every module."""


class DiffractiveError(Exception):
    """Base class for all errors raised by this package."""


class GeometryError(DiffractiveError, ValueError):
    pass


class SubWavelengthDistance(GeometryError):
    pass


class UndersampledGrid(GeometryError):
    pass


class GeometryMismatch(GeometryError):
    pass


class IndexOutOfRange(GeometryError, IndexError):
    pass


class DoesNotFit(GeometryError):
    pass


class SizeGuardExceeded(DiffractiveError):
    pass


class LengthMismatch(DiffractiveError, ValueError):
    pass


class DegenerateBasePoint(DiffractiveError, ValueError):
    pass


class EmptyLayerList(DiffractiveError, ValueError):
    pass


class EmptyLayer(DiffractiveError, ValueError):
    pass


class AllZeroSignal(DiffractiveError, ValueError):
    """Every detector reads zero; ``scores`` holds the uniform fallback."""

    def __init__(self, msg, scores=None):
        super().__init__(msg)
        self.scores = scores


class NonFiniteScore(DiffractiveError, ValueError):
    pass


class UnknownClass(DiffractiveError, ValueError):
    pass


class StaleCache(DiffractiveError):
    pass


class TooFewCells(DiffractiveError, ValueError):
    pass


class TruncatedFile(DiffractiveError, ValueError):
    pass


class LabelOutOfRange(DiffractiveError, ValueError):
    pass


class ValueOutOfRange(DiffractiveError, ValueError):
    pass


class ConfigError(DiffractiveError, ValueError):
    pass


class MissingRecords(DiffractiveError):
    def __init__(self, msg, orphans=()):
        super().__init__(msg)
        self.orphans = list(orphans)
