"""Exception hierarchy shared by every module."""


class ShevError(Exception):
    """Base class for all toolkit errors."""


class InvalidParams(ShevError, ValueError):
    pass


class DiscriminantNegative(ShevError, ArithmeticError):
    """Battery power demand exceeds what the equivalent circuit can deliver."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class PowerOutOfRange(ShevError, ValueError):
    pass


class ParseError(ShevError, ValueError):
    pass


class NonMonotonicTime(ParseError):
    pass


class UnknownStage(ShevError, KeyError):
    pass


class TargetUnreachable(ShevError):
    pass


class NoConvergence(ShevError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class RecursionLimit(ShevError):
    pass


class Infeasible(ShevError):
    pass


class AllInfeasible(Infeasible):
    pass


class NotSolved(ShevError):
    pass


class DegenerateSweep(ShevError):
    pass
