"""Exception types shared across the package."""


class ParseError(ValueError):
    """Raised when an input file cannot be parsed (row/column cited)."""


class ValidationError(ValueError):
    """Raised when parsed data violates an invariant (ids, labels, shapes)."""


class NumericalError(RuntimeError):
    """Raised when a computation produces non-finite values."""


class TrainingDivergence(RuntimeError):
    """Raised when the training loss turns NaN; message carries the epoch."""


class MissingArtifactError(FileNotFoundError):
    """Raised by pipeline stages when an upstream artifact is absent."""
