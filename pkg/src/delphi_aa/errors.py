"""Exception hierarchy shared by every module of the package."""


class DelphiError(Exception):
    """Base class for all errors raised by delphi_aa."""


class ConfigError(DelphiError):
    pass


class OutOfRange(DelphiError):
    """An input value lies outside the configured domain [s, e]."""


class NotTerminated(DelphiError):
    pass


class ZeroDenominator(DelphiError):
    """Cross-level aggregation saw a zero weight sum.

    The protocol guarantees a sum of at least one half whenever the honest
    range is bounded by the configured maximum, so this signals a broken
    assumption or a bug and is never patched over.
    """


class MalformedBatch(DelphiError):
    pass


class MixedSender(MalformedBatch):
    pass


class TruncatedRecord(MalformedBatch):
    pass


class UnknownKind(MalformedBatch):
    pass


class OverlappingRuns(MalformedBatch):
    pass


class OutOfUnitInterval(DelphiError):
    """A movement symbol pushed a reconstructed value outside [0, 1]."""


class NonTermination(DelphiError):
    pass


class InvalidModel(DelphiError):
    pass


class TooFewValues(DelphiError):
    pass


class ConflictingCertificates(DelphiError):
    pass
