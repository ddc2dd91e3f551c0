"""Exception types shared across the package."""


class MatchbreakError(Exception):
    """Base class for every package-specific error."""


class TemplateFormatError(MatchbreakError, ValueError):
    """A template file or payload could not be parsed."""


class DegenerateTemplateError(MatchbreakError, ValueError):
    """An operation required a nonzero template."""


class DimensionMismatchError(MatchbreakError, ValueError):
    """Two vectors of different dimension were combined."""


class SingularSystemError(MatchbreakError, ArithmeticError):
    """A linear system offered no trustworthy pivot.

    Callers that chose the system's rows (probe sets, boundary points) are
    expected to catch this and resample rather than accept a garbage solution.
    """


class UnknownIdentityError(MatchbreakError, KeyError):
    """An authentication claim named an identity that is not enrolled."""


class LockedOutError(MatchbreakError, RuntimeError):
    """The oracle refuses further queries because its limit was reached."""


class OracleModeError(MatchbreakError, ValueError):
    """The requested operation is incompatible with the oracle's mode or metric."""


class AttackFailedError(MatchbreakError, RuntimeError):
    """An attack could not produce a reconstruction."""


class NoFalseMatchError(AttackFailedError):
    """Every probed breaking-set member was rejected.

    `attempts` records how many members were probed before giving up.
    """

    def __init__(self, message: str, attempts: int = 0):
        super().__init__(message)
        self.attempts = attempts


class OutsidePointError(AttackFailedError):
    """No probe direction produced a point outside the acceptance region."""


class WireProtocolError(MatchbreakError, RuntimeError):
    """The remote oracle returned an unexpected or malformed response.

    `code` carries the server-side error code when one was present.
    """

    def __init__(self, message: str, code: str | None = None):
        super().__init__(message)
        self.code = code
