"""Exception types shared across the package."""


class MvBevError(Exception):
    pass


class BehindCamera(MvBevError):
    pass


class DegenerateCamera(MvBevError):
    pass


class InvalidCalibration(MvBevError, ValueError):
    pass


class ShapeMismatch(MvBevError, ValueError):
    pass


class GridTooSmall(MvBevError, ValueError):
    pass


class CorruptDataset(MvBevError):
    pass


class NoActiveViews(MvBevError, ValueError):
    pass


class PositionOutOfGrid(MvBevError, ValueError):
    pass


class CacheMismatch(MvBevError):
    pass


class StepOutOfRange(MvBevError, ValueError):
    pass


class NoGroundTruth(MvBevError, ValueError):
    pass


class EmptyDataset(MvBevError, ValueError):
    pass


class NonFiniteValue(MvBevError, FloatingPointError):
    pass
