"""Exception hierarchy shared by every module."""


class AEGError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgument(AEGError, ValueError):
    pass


class ParseError(AEGError, ValueError):
    """Malformed input file. ``line`` is 1-based (header is line 1)."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalFailure(AEGError, ArithmeticError):
    def __init__(self, message, iteration=None):
        self.iteration = iteration
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)


class UnboundedMinimizer(NumericalFailure):
    pass


class DivergenceError(NumericalFailure):
    """Raised by the game solvers; carries the trace recorded so far."""

    def __init__(self, message, iteration=None, trace=None):
        super().__init__(message, iteration)
        self.trace = trace


class ContractViolation(AEGError):
    """The NoBox contract was broken (attack built from a target's weights)."""


class Unsupported(AEGError, NotImplementedError):
    pass


class InternalError(AEGError, RuntimeError):
    pass
