"""Exception hierarchy shared by every ctnet module."""


class CTNetError(Exception):
    """Base class for all errors raised by ctnet."""


class ShapeError(CTNetError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NonFiniteError(CTNetError, ArithmeticError):
    """A NaN or infinity appeared in a tensor."""


class GraphError(CTNetError, RuntimeError):
    """Misuse of the computation record (e.g. backward run twice)."""


class ConfigError(CTNetError, ValueError):
    """A configuration violates one of its invariants."""


class DataError(CTNetError):
    """Input data is missing, malformed, or inconsistent."""


class FormatError(DataError, ValueError):
    """A file does not follow its binary or text format."""


class UnknownFormatError(FormatError):
    pass


class CorruptHeaderError(FormatError):
    pass


class ChecksumError(FormatError):
    """Trailing CRC32 does not match the file contents."""


class InconsistentSliceError(FormatError):
    """Slices of one volume disagree in size or depth."""


class ManifestError(DataError, ValueError):
    pass


class DuplicateCaseError(ManifestError):
    pass


class MissingFileError(ManifestError, FileNotFoundError):
    pass


class BadLabelError(ManifestError):
    pass


class MissingLabelError(ManifestError):
    pass
