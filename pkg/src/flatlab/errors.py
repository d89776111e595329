"""Exception types shared across modules; the CLI maps them to exit codes."""


class InfeasibleParameters(Exception):
    """Parameters are valid input but no bound can be produced with them."""


class HypothesisFailure(InfeasibleParameters):
    """A hypothesis of the bound (such as metric domination) does not hold."""

    def __init__(self, message: str, details: dict | None = None):
        super().__init__(message)
        self.details = details or {}


class InvariantViolation(RuntimeError):
    """A property that must hold by construction failed: an implementation bug."""
