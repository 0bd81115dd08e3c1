"""Exception hierarchy shared by all activeview modules."""


class ActiveViewError(Exception):
    """Base class for every error raised by this package."""


class ParseError(ActiveViewError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyInputError(ActiveViewError, ValueError):
    pass


class DomainError(ActiveViewError, ValueError):
    pass


class CapacityError(ActiveViewError, ValueError):
    pass


class DegenerateError(ActiveViewError, ValueError):
    pass


class ContractError(ActiveViewError, ValueError):
    pass


class ZeroMassError(ContractError):
    pass


class TransportError(ActiveViewError):
    pass


class ProviderTimeout(TransportError):
    pass


class ConnectionFailed(TransportError):
    pass


class MalformedPayload(TransportError):
    pass


class StageError(ActiveViewError):
    """Pipeline failure tagged with the stage that raised it."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage} stage failed: {cause}")
