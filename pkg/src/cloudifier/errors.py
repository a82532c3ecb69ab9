"""Exception hierarchy shared by every cloudifier module."""


class CloudifierError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CloudifierError, ValueError):
    """Two tensors (or a tensor and a parameter) have incompatible shapes."""

    def __init__(self, message, *shapes):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)
        self.shapes = tuple(tuple(s) for s in shapes)


class NumericError(CloudifierError, ArithmeticError):
    """A computation produced NaN or Inf."""


class TapeError(CloudifierError, RuntimeError):
    """The gradient tape cannot be replayed (cycle or missing dependency)."""


class BuildError(CloudifierError, ValueError):
    """A network configuration violates one of its structural invariants."""


class FormatError(CloudifierError):
    """Base class for dataset / checkpoint file problems."""


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class CorruptFileError(FormatError):
    pass
