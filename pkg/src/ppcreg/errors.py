"""Exception hierarchy shared by all ppcreg modules."""


class PPCError(Exception):
    """Base class for every error raised by ppcreg."""


class InvalidArgumentError(PPCError, ValueError):
    pass


class BehindCameraError(PPCError):
    """A point lies at or behind the X-ray source plane."""


class NothingVisibleError(PPCError):
    pass


class EmptySurfaceError(PPCError):
    pass


class InsufficientContoursError(PPCError):
    pass


class InsufficientConstraintsError(PPCError):
    pass


class RankDeficientError(PPCError):
    pass


class InfeasibleRangesError(PPCError):
    pass


class FormatError(PPCError, ValueError):
    """Malformed file or configuration. ``line`` is 1-based when known."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
