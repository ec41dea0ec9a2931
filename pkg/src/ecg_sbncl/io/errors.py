class SignalIOError(ValueError):
    """Base class for parser errors."""


class TruncatedData(SignalIOError):
    pass


class MalformedHeader(SignalIOError):
    pass


class UnsupportedFormat(SignalIOError):
    pass


class MalformedAnnotation(SignalIOError):
    pass


class LeadNotFound(SignalIOError):
    pass


class RecordTooShort(SignalIOError):
    pass


class WrongSamplingRate(SignalIOError):
    pass


class CorruptStore(SignalIOError):
    pass
