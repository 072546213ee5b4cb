class InvalidInputError(ValueError):
    """Argument outside an operation's domain (empty vector, bad shape, ...)."""


class FormatError(ValueError):
    """Malformed file or stream content."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ContractError(RuntimeError):
    """API used out of order, e.g. backward without a matching forward."""


class ConfigError(ValueError):
    pass


class NumericalError(FloatingPointError):
    """Non-finite loss encountered during training."""

    def __init__(self, message, step=None, task=None, sentence=None):
        super().__init__(message)
        self.step = step
        self.task = task
        self.sentence = sentence
