"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Invalid input or configuration."""


class DatasetError(ValidationError):
    """A dataset or schema could not be read or failed validation."""


class RowError(DatasetError):
    def __init__(self, source: str, line: int, message: str):
        super().__init__(f"{source}:{line}: {message}")
        self.source = source
        self.line = line


class ConfigError(ValidationError):
    pass


class EmptyLocalDataset(RuntimeError):
    """Pre-filtering selected no training observations for a target situation."""
