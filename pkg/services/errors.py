"""Exception hierarchy shared by the services.

Every error a service raises derives from ``TreeflowError`` so the command
line layer can map it to a machine-readable record and an exit code.
"""


class TreeflowError(Exception):
    """Base class for all treeflow failures."""

    kind = "error"

    def to_record(self) -> dict:
        return {"status": "error", "kind": self.kind, "message": str(self)}


class NonCanonicalVertexError(TreeflowError, ValueError):
    """Vertex coordinates that are not in canonical form."""

    kind = "non-canonical-vertex"

    def __init__(self, message: str, letter_index: int):
        super().__init__(message)
        self.letter_index = letter_index

    def to_record(self) -> dict:
        record = super().to_record()
        record["letter_index"] = self.letter_index
        return record


class InvalidQueryError(TreeflowError, ValueError):
    """Kernel query whose levels and distance cannot belong to two vertices."""

    kind = "invalid-query"


class TrapezoidError(TreeflowError, ValueError):
    """Trapezoid parameters outside the admissible range."""

    kind = "invalid-trapezoid"


class DomainError(TreeflowError, ValueError):
    """Argument outside an operation's domain (negative time, violated hypothesis)."""

    kind = "domain"


class TruncationError(TreeflowError, ValueError):
    """Truncation radius too small for the requested oracle order."""

    kind = "truncation"


class AtomAxiomError(TreeflowError, ValueError):
    """An atom failed its support, size or cancellation axiom."""

    kind = "atom-axiom"


class ConfigError(TreeflowError, ValueError):
    kind = "config"


class ConvergenceError(TreeflowError, RuntimeError):
    """Quadrature or series did not reach the requested tolerance."""

    kind = "non-convergence"

    def __init__(self, message: str, achieved: float = float("nan")):
        super().__init__(message)
        self.achieved = achieved

    def to_record(self) -> dict:
        record = super().to_record()
        record["achieved"] = self.achieved
        return record


class TailExtrapolationError(ConvergenceError):
    """Large-t integrand does not decay like a power close enough to t^-2."""

    kind = "tail-extrapolation"

    def __init__(self, message: str, exponent: float):
        super().__init__(message)
        self.exponent = exponent

    def to_record(self) -> dict:
        record = super().to_record()
        record["exponent"] = self.exponent
        return record


class NonFiniteError(ConvergenceError):
    """A kernel or norm evaluation produced nan or inf."""

    kind = "non-finite"
