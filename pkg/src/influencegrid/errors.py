"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Raised when a configuration is structurally invalid (CLI exit code 1)."""


class ContractError(ValueError):
    """Raised when a caller violates an operation's precondition."""


class NumericError(RuntimeError):
    """Raised when a non-finite value appears in training (CLI exit code 2).

    ``term`` names the loss/gradient component that went non-finite.
    """

    def __init__(self, message: str, term: str | None = None):
        super().__init__(message if term is None else f"{message} (term: {term})")
        self.term = term


class NoData(Exception):
    """Raised by metrics when there is not enough data to compute a value."""
