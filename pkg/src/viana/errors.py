"""Exception hierarchy shared by every module of the package."""


class VianaError(Exception):
    """Base class for operational errors (CLI exit status 1)."""


class InvalidParameter(VianaError, ValueError):
    pass


class NotInvariant(VianaError):
    pass


class NoSignChange(VianaError, ValueError):
    pass


class NotRepelling(VianaError):
    pass


class OutOfRange(VianaError, ValueError):
    pass


class DegenerateOrbit(VianaError):
    pass


class CriticalPoint(VianaError, ValueError):
    pass


class BaseTooWide(VianaError, ValueError):
    pass


class AdmissibilityLost(VianaError):
    pass


class NotFullBase(VianaError, ValueError):
    pass


class InsufficientSegments(VianaError):
    pass


class LengthMismatch(VianaError, ValueError):
    pass


class NonzeroAtZero(VianaError, ValueError):
    pass


class VerificationFailed(VianaError):
    pass


class NotDominated(VianaError, ValueError):
    pass


class TooFewPoints(VianaError, ValueError):
    pass


class PreconditionTooThin(VianaError, ValueError):
    pass


class BudgetExceeded(VianaError):
    """Growth ran out of iterations; ``result`` carries the partial outcome."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class TooFewResolved(VianaError):
    pass


class NoSignal(VianaError):
    pass


class ConfigError(VianaError):
    """Bad configuration value; ``key`` and ``line`` locate the offender."""

    def __init__(self, message, key=None, line=None):
        where = f" (key {key!r}" + (f", line {line})" if line is not None else ")") if key else ""
        super().__init__(message + where)
        self.key = key
        self.line = line


class UnknownKey(ConfigError):
    pass


class ConfigTypeError(ConfigError, TypeError):
    pass


class RangeError(ConfigError):
    pass
