class PanCadError(Exception):
    """Base class for all pancad errors."""


class ParseError(PanCadError, ValueError):
    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class UnknownClass(PanCadError, ValueError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"Unknown class '{name}'.")


class NotParallel(PanCadError, ValueError): ...


class CanvasTooLarge(PanCadError, ValueError): ...


class DimensionMismatch(PanCadError, ValueError): ...


class EmptyDataset(PanCadError, ValueError): ...


class LengthMismatch(PanCadError, ValueError): ...


class InfeasibleConfig(PanCadError, ValueError): ...


class InvariantViolation(PanCadError, AssertionError):
    """An internal invariant does not hold; this is a bug, not bad input."""
