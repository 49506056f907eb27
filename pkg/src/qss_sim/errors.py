"""Exception hierarchy shared by every module of the simulator."""


class QSSError(Exception):
    """Base class for all simulator errors."""


class DimensionError(QSSError, ValueError):
    pass


class NormalizationError(QSSError, ValueError):
    pass


class SpanError(QSSError, ValueError):
    """State has weight outside the subspace a measurement was built for."""


class ConfigError(QSSError, ValueError):
    pass


class LengthError(QSSError, ValueError):
    pass


class EncodingDomainError(QSSError, ValueError):
    """An encoding value lies outside the alphabet allowed by the mode."""


class StateError(QSSError, RuntimeError):
    pass


class IncompleteError(QSSError, RuntimeError):
    pass


class DomainError(QSSError, ValueError):
    pass


class EmptyBatchError(QSSError, ValueError):
    pass


class AbortSignal(QSSError):
    """Raised by a check step when the parties must abort the round.

    Carries the protocol step label and a short cause string so that the
    orchestrator can record them in the transcript.
    """

    def __init__(self, step: str, cause: str, check=None):
        super().__init__(f"abort at {step}: {cause}")
        self.step = step
        self.cause = cause
        self.check = check
