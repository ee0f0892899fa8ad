class CBLInputError(ValueError):
    """Malformed or out-of-contract input."""


class CurvatureError(CBLInputError):
    """Operation requires a flat (kappa = 0) context system."""


class CapacityError(CBLInputError):
    """Exhaustive routine refused because the search space is too large."""


class DecompositionError(CBLInputError):
    """A clause is not covered by any bag of the tree decomposition."""


class InvariantViolation(RuntimeError):
    """Internal invariant broken; indicates a bug, never bad input."""


class ParseError(CBLInputError):
    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column
