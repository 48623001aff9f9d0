"""Exception types shared across the toolkit."""


class SeqlanError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(SeqlanError, ValueError):
    """Tensor operands have incompatible shapes."""


class DomainError(SeqlanError, ValueError):
    """Input outside the mathematical domain of an operation (e.g. log of x <= 0)."""


class IndexingError(SeqlanError, IndexError):
    """Lookup id outside the valid range of a table."""


class ContractError(SeqlanError, ValueError):
    """A call violated an operation precondition (empty sequence, non-scalar loss, ...)."""


class NonFiniteError(SeqlanError, FloatingPointError):
    """A tensor holds NaN or Inf where finite values are required."""


class ConfigError(SeqlanError, ValueError):
    """Invalid model or run configuration."""


class ParseError(SeqlanError, ValueError):
    """Malformed input file; carries a line number when available."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemeError(SeqlanError, ValueError):
    """Tag does not follow the requested span-encoding scheme."""


class ModelFormatError(SeqlanError, ValueError):
    """Model file is damaged or structurally inconsistent."""


class ModelVersionError(ModelFormatError):
    """Model file magic or format version is not recognized."""


class LabelMismatchError(SeqlanError, ValueError):
    """Dataset labels do not match the label alphabet a model was trained with."""


class TrainingDivergedError(SeqlanError, ArithmeticError):
    """Training produced a non-finite loss; carries epoch/batch diagnostics."""

    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
