"""Exception hierarchy for gemindex."""


class GemError(Exception):
    """Base class for every error raised by the library."""


class DimMismatch(GemError):
    pass


class ZeroVector(GemError):
    pass


class EmptySet(GemError):
    pass


class SolverFailure(GemError):
    pass


class CodeOutOfRange(GemError):
    pass


class TooFewPoints(GemError):
    pass


class TooFewSamples(GemError):
    pass


class EmptyProfile(GemError):
    pass


class EmptyQuery(GemError):
    pass


class EmptyGraph(GemError):
    pass


class UnknownDocId(GemError):
    pass


class DuplicateId(GemError):
    pass


class EmptyGroundTruth(GemError):
    pass


class InconsistentQrels(GemError):
    pass


class FormatError(GemError):
    """Base for on-disk format problems."""


class BadMagic(FormatError):
    pass


class BadVersion(FormatError):
    pass


class Truncated(FormatError):
    pass


class ChecksumMismatch(FormatError):
    pass
