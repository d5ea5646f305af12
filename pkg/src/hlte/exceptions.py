"""Exception hierarchy shared by every module of the package."""


class HlteError(Exception):
    """Base class for all package errors."""


class DomainError(HlteError, ValueError):
    """Input outside the mathematical domain of an operation."""


class ConfigError(HlteError, ValueError):
    """Invalid configuration value or precondition on a configuration."""


class ParseError(HlteError, ValueError):
    """Malformed input file; carries the offending row and column."""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class SchemaError(ParseError):
    """Required columns are missing or misnamed."""


class FitError(HlteError, RuntimeError):
    """A model could not be fitted (e.g. an empty treatment arm)."""

    def __init__(self, message, nuisance=None, fold=None):
        self.nuisance = nuisance
        self.fold = fold
        super().__init__(message)


class TrainingDivergedError(FitError):
    """Non-finite loss encountered during gradient training."""

    def __init__(self, message, epoch):
        self.epoch = epoch
        super().__init__(f"{message} (epoch {epoch})")


class DegenerateWeightError(HlteError, ArithmeticError):
    """A weight normalizer is not strictly positive."""


class UnsupportedKindError(HlteError, ValueError):
    """Operation is not defined for the requested weighting or learner kind."""
