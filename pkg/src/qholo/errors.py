"""Exception hierarchy shared by all qholo modules."""


class HoloError(Exception):
    """Base class for every error raised by qholo."""


class ShapeError(HoloError, ValueError):
    """Grids that must share dimensions do not."""


class DomainError(HoloError, ValueError):
    """A value lies outside the domain an operation accepts."""


class ScheduleError(HoloError, ValueError):
    """Phase-step schedule is wrong for the requested operation."""


class SubsetError(ScheduleError):
    """Requested frame subset cannot be taken from the base schedule."""


class ResolutionError(HoloError, ValueError):
    """Object features would be smaller than the sampling allows."""


class GeometryError(HoloError, ValueError):
    """Bar group or layout geometry cannot be measured or placed."""


class RegionError(HoloError, ValueError):
    """Analysis region is out of bounds, too small or overlapping."""


class RangeError(HoloError, OverflowError):
    """Expected photon counts exceed the count representation."""


class DegenerateError(HoloError, ArithmeticError):
    """A quantity is undefined, e.g. a zero standard deviation in a ratio."""


class ConfigError(HoloError, ValueError):
    """Invalid run configuration; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
