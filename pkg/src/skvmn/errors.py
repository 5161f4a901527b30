"""Exception hierarchy shared by every module in the package."""


class SKVMNError(Exception):
    pass


class DimensionError(SKVMNError, ValueError):
    pass


class DomainError(SKVMNError, ValueError):
    pass


class ContractError(SKVMNError, RuntimeError):
    pass


class InputError(SKVMNError, ValueError):
    pass


class ConfigError(SKVMNError, ValueError):
    pass


class UndefinedMetricError(SKVMNError, ValueError):
    pass


class ParseError(SKVMNError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FormatError(SKVMNError, ValueError):
    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class TrainingAborted(SKVMNError, RuntimeError):
    pass
