"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An argument violates a documented precondition or type invariant."""


class MissingOracle(RuntimeError):
    """An operation needs an exact oracle the problem does not provide."""


class NumericalDomainError(ArithmeticError):
    """An input left the numerical domain of an operation (e.g. a nearly
    singular matrix where a well-conditioned inverse is required)."""


class NumericalAbort(RuntimeError):
    """A solver produced a non-finite quantity and stopped.

    Carries the records collected before the abort so callers can salvage
    partial output.
    """

    def __init__(self, message, records=None):
        super().__init__(message)
        self.records = list(records) if records is not None else []


class ConfigError(ValueError):
    """An experiment configuration is malformed or out of range."""
