"""Exception types shared across the package."""


class EvoMarketError(Exception):
    """Base class for all package errors."""


class ConfigError(EvoMarketError):
    """Malformed or semantically invalid experiment configuration."""


class AssumptionViolation(EvoMarketError):
    """A model assumption does not hold for the given environment/constraints.

    ``label`` is one of the documented assumption tags "(A.1)".."(A.5)".
    """

    def __init__(self, label: str, message: str):
        self.label = label
        super().__init__(f"{label} violated: {message}")


class NumericalError(EvoMarketError):
    """A numerical routine failed to converge or produced invalid values."""


class ConsistencyError(EvoMarketError):
    """An internal cross-check failed (solver output rejected)."""
