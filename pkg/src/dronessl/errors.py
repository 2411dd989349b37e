"""Exception hierarchy.

Every error raised on purpose by the toolkit derives from :class:`SSLError`, so
callers (and the fuzz tests) can tell a typed rejection from a crash.
"""


class SSLError(Exception):
    """Base class for all toolkit errors."""


class InvalidConfig(SSLError, ValueError):
    pass


class RecordingTooShort(SSLError, ValueError):
    pass


class InconsistentBlocks(SSLError, ValueError):
    pass


class EmptyInput(SSLError, ValueError):
    pass


class ShapeMismatch(SSLError, ValueError):
    pass


class InvalidMicIndex(SSLError, IndexError):
    pass


class InvalidStep(SSLError, ValueError):
    pass


class TooFewFrames(SSLError, ValueError):
    pass


class ZeroSignal(SSLError, ValueError):
    pass


class EmptyTemplateBank(SSLError, ValueError):
    pass


class SpeedOutOfRange(SSLError, ValueError):
    pass


class InvalidAlpha(SSLError, ValueError):
    pass


class SingularNoiseCovariance(SSLError, ValueError):
    pass


class InvalidCutoff(SSLError, ValueError):
    pass


class InsufficientEnergy(SSLError, ValueError):
    pass


class AllMasked(SSLError, ValueError):
    pass


class DelayTooLarge(SSLError, ValueError):
    pass


class ZeroNoise(SSLError, ValueError):
    pass


class TaskKindMismatch(SSLError, ValueError):
    pass


class EmptyTrajectory(SSLError, ValueError):
    pass


class IoFailure(SSLError, OSError):
    pass


class FormatError(SSLError, ValueError):
    """Base for file-format problems (WAV, CSV, geometry, config)."""


class UnsupportedFormat(FormatError):
    def __init__(self, message, format_tag=None):
        super().__init__(message)
        self.format_tag = format_tag


class CorruptHeader(FormatError):
    pass


class MalformedRow(FormatError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DuplicateId(FormatError):
    def __init__(self, recording_id, line=None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"duplicate id {recording_id!r}{where}")
        self.recording_id = recording_id
        self.line = line


class ParseError(FormatError):
    pass


class ValidationError(FormatError):
    """Aggregated config validation failure; ``errors`` lists every problem."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class FileNotFound(IoFailure, FileNotFoundError):
    pass
