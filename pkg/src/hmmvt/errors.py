"""Exception types raised across the package."""


class HmmError(ValueError):
    """Base class for invalid models, sequences and arguments."""


class NonStochasticError(HmmError):
    def __init__(self, kind, column, deviation):
        self.kind = kind
        self.column = column
        self.deviation = deviation
        super().__init__(
            f"non-stochastic column: {kind} column {column} deviates from 1 by {deviation:.3e}"
        )


class NonMixingError(HmmError):
    def __init__(self, modulus):
        self.modulus = modulus
        super().__init__(
            f"non-mixing chain: second eigenvalue modulus {modulus:.12f} is not below 1 - 1e-9"
        )


class UnreachableSequenceError(HmmError):
    def __init__(self, msg="sequence unreachable under trial model"):
        super().__init__(msg)


class GuardError(HmmError):
    """Raised when an exhaustive computation would exceed its size guard."""


class TruncationError(HmmError):
    """Raised when a truncated zeta series has no real root in the search window."""
