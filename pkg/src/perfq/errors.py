"""Exception hierarchy shared by all perfq modules."""


class PerfqError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(PerfqError):
    """A caller-supplied value violates a documented precondition."""


class NumericalFailureError(PerfqError):
    """A computation produced non-finite values.

    `step` carries the integrator micro-step or optimizer iteration at which
    the failure was detected, when known.
    """

    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class FormatError(PerfqError):
    """A file does not conform to the documented binary/CSV layout.

    `offset` is the byte offset at which parsing failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
