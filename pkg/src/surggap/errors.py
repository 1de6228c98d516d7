"""Exception hierarchy.

Every error raised by the package derives from :class:`SurgGapError`. The
three intermediate classes map onto CLI exit codes: configuration problems
(2), bad or unsuitable data (3) and solver failures (4).
"""


class SurgGapError(Exception):
    exit_code = 1


class ConfigError(SurgGapError, ValueError):
    exit_code = 2


class DataError(SurgGapError, ValueError):
    exit_code = 3


class SolverError(SurgGapError, RuntimeError):
    exit_code = 4


class InvalidArgument(ConfigError):
    pass


class MissingGrs(ConfigError):
    pass


# feature files and manifests
class BadMagic(DataError):
    pass


class UnsupportedVersion(DataError):
    pass


class TruncatedPayload(DataError):
    pass


class DimensionMismatch(DataError):
    """Header-declared shape disagrees with the payload size."""


class MissingFile(DataError):
    pass


class DimMismatchAcrossVideos(DataError):
    pass


class DuplicateVideoId(DataError):
    pass


class GrsOutOfRange(DataError):
    pass


class InfeasibleSampling(DataError):
    pass


# transport
class DimMismatch(DataError):
    pass


class Degenerate(DataError):
    pass


class EmptySet(DataError):
    pass


class NumericalUnderflow(SolverError):
    pass


# few-shot protocol
class GrsOutOfTaskRange(DataError):
    pass


class InsufficientClassSize(DataError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyInput(DataError):
    pass


class CellMismatch(DataError):
    pass
