"""Exception hierarchy shared by every grover module."""


class GroverError(Exception):
    """Base class for all errors raised by this package."""


class InputError(GroverError, ValueError):
    """Bad data handed to an operation (out-of-range ids, empty corpora, ...)."""


class ConfigError(GroverError, ValueError):
    """Invalid hyperparameters or inconsistent shapes."""


class ParseError(InputError):
    """A file could not be parsed. Carries the offending line number when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class TrainingDiverged(GroverError, ArithmeticError):
    """NaN or Inf showed up in a loss or gradient."""


class ContractViolation(GroverError, RuntimeError):
    """An operation was called outside its precondition."""


class ManifestMismatch(GroverError):
    """A checkpoint manifest does not match its contents or the current run."""
