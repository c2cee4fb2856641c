"""Exception hierarchy shared by every module of the package."""


class MSFSError(Exception):
    """Base class for all package errors."""


class DimensionError(MSFSError, ValueError):
    """Tensor shapes or channel counts are inconsistent with an operation."""


class ContractError(MSFSError, RuntimeError):
    """An API precondition was violated (wrong call order, missing state, bad argument)."""


class IngestError(MSFSError):
    """A dataset directory or image file could not be used."""


class FormatError(MSFSError):
    """A checkpoint file is corrupt, truncated or of an unknown version."""


class NumericalError(MSFSError, ArithmeticError):
    """A NaN or infinity showed up where finite values are required."""
