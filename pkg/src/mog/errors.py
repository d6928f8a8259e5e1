"""Exception hierarchy shared by every layer of the package."""


class MogError(Exception):
    """Base class for all errors raised by this package."""


class EmptyRange(MogError):
    pass


class RangeOutOfBounds(MogError):
    pass


class NonContiguousRanges(MogError):
    pass


class NotPrefixRange(MogError):
    pass


class EntryNotFound(MogError):
    pass


class UnknownCheckpoint(MogError):
    pass


class DuplicateKey(MogError):
    pass


class KeyNotFound(MogError):
    pass


class StaleAhead(MogError):
    """Client state claims more history than the server holds."""


class InvalidParameters(MogError):
    pass


class DecodeError(MogError):
    """Binary or text input could not be parsed."""


class VerificationFailed(MogError):
    """A proof did not verify.  ``stage`` names the check that failed."""

    def __init__(self, message: str = "", stage: str = ""):
        super().__init__(message or stage)
        self.stage = stage or type(self).__name__


class ShrinkingLog(VerificationFailed):
    pass


class GapInCoverage(VerificationFailed):
    pass


class BadSignature(VerificationFailed):
    pass


class InconsistentCheckpoint(VerificationFailed):
    pass


class MalformedProof(VerificationFailed, DecodeError):
    pass
