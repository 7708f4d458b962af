class ContractViolation(ValueError):
    """Raised when an operation is called outside its documented preconditions."""


class FormatError(ValueError):
    """Malformed on-disk data (PPM images, checkpoints)."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(ContractViolation):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
