"""Shared exception types. CLI maps these onto exit codes."""


class DeskloraError(Exception):
    """Base class for engine errors."""


class DimensionError(DeskloraError):
    """Tensor shapes incompatible for the requested operation."""


class ContractError(DeskloraError):
    """A documented precondition was violated by the caller."""


class ConfigError(DeskloraError):
    """Invalid or inconsistent configuration."""


class DataError(DeskloraError):
    """Unreadable, empty, or corrupt input data."""


class FormatError(DataError):
    """A serialized artifact does not match its declared format."""


class BudgetError(DeskloraError):
    """A registered allocation would exceed a memory budget."""

    def __init__(self, message: str, breakdown: dict | None = None):
        super().__init__(message)
        self.breakdown = dict(breakdown or {})


class TrainingError(DeskloraError):
    """Training aborted (NaN loss/gradients or similar)."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
