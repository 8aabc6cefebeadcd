"""Exception hierarchy shared by every gamma subpackage."""


class GammaError(Exception):
    """Base class for all errors raised by this package."""


# -- PE format ---------------------------------------------------------------

class PEFormatError(GammaError, ValueError):
    """Raised when a byte string cannot be decomposed as a PE file.

    Attributes
    ----------
    offset : int or None
        File offset of the offending structure, when one can be named.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (offset 0x{offset:x})"
        super().__init__(message)
        self.offset = offset


class BadMzMagic(PEFormatError):
    pass


class BadPeOffset(PEFormatError):
    pass


class BadPeMagic(PEFormatError):
    pass


class TruncatedHeader(PEFormatError):
    pass


class MalformedSectionTable(PEFormatError):
    pass


class OverlappingLayout(GammaError, ValueError):
    """Two components of a PeFile claim the same byte range."""


class ZeroAlignment(GammaError, ValueError):
    pass


# -- payload corpus ----------------------------------------------------------

class CorpusError(GammaError):
    pass


class EmptyDirectory(CorpusError):
    pass


class NoMatchingSections(CorpusError):
    pass


class CorruptManifest(CorpusError):
    pass


class MissingBlob(CorpusError):
    pass


class SizeMismatch(CorpusError):
    pass


# -- manipulation ------------------------------------------------------------

class ManipulationError(GammaError):
    pass


class VectorLengthMismatch(ManipulationError, ValueError):
    pass


class LayoutOverflow(ManipulationError):
    """A 32-bit layout field would overflow, so the candidate is aborted."""


# -- detector / service ------------------------------------------------------

class DetectorError(GammaError):
    pass


class EmptyInput(DetectorError, ValueError):
    pass


class DegenerateData(DetectorError, ValueError):
    pass


class MalformedResponse(DetectorError):
    pass


class BindFailure(DetectorError, OSError):
    pass


# -- optimizer ---------------------------------------------------------------

class CandidateEvaluationFailed(GammaError):
    """Scoring or materializing one candidate failed; it is charged a query."""


class AllCandidatesFailed(GammaError):
    pass


class InputNotParseable(GammaError, ValueError):
    pass


class EmptyCampaign(GammaError):
    pass
