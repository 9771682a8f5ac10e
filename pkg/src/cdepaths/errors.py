"""Exception types raised across the package."""


class CdePathsError(Exception):
    """Base class for all errors raised by cdepaths."""


class ParseError(CdePathsError, ValueError):
    def __init__(self, message, row=None, col=None):
        self.row = row
        self.col = col
        where = []
        if row is not None:
            where.append(f"row {row}")
        if col is not None:
            where.append(f"col {col}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class TooShort(CdePathsError, ValueError):
    pass


class EmptySplit(CdePathsError, ValueError):
    pass


class BadRatios(CdePathsError, ValueError):
    pass


class EmptyChannel(CdePathsError, ValueError):
    pass


class OutOfDomain(CdePathsError, ValueError):
    pass


class ShapeError(CdePathsError, ValueError):
    pass


class BadIndex(CdePathsError, IndexError):
    pass


class BadLadder(CdePathsError, ValueError):
    pass


class MaxStepsExceeded(CdePathsError, RuntimeError):
    pass


class StepUnderflow(CdePathsError, RuntimeError):
    pass


class NumericalBlowup(CdePathsError, FloatingPointError):
    pass


class UnsupportedForTraining(CdePathsError, ValueError):
    pass


class IoError(CdePathsError, OSError):
    pass
