"""Exception hierarchy shared across the package."""


class FmevalError(Exception):
    pass


class InvalidData(FmevalError, ValueError):
    pass


class InvalidSplit(FmevalError, ValueError):
    pass


class InvalidContext(FmevalError, ValueError):
    pass


class InvalidInput(FmevalError, ValueError):
    pass


class ModeViolation(FmevalError, ValueError):
    """A prompt would mix likelihood-only and posterior material."""


class DomainError(FmevalError, ValueError):
    """A synthetic function was evaluated outside its domain."""


class ExtractionFailure(FmevalError):
    """No valid prediction could be read from a model response."""


class MockParseFailure(FmevalError):
    pass


class SelectionFailure(FmevalError):
    pass


class NumericalFailure(FmevalError, ArithmeticError):
    pass


class DivergenceError(FmevalError, ArithmeticError):
    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"training loss became NaN at epoch {epoch}")


class LlmError(FmevalError):
    """Base class for failures talking to a chat-completion endpoint."""


class Timeout(LlmError, TimeoutError):
    pass


class RateLimited(LlmError):
    pass


class AuthFailure(LlmError):
    pass


class MalformedResponse(LlmError):
    pass
