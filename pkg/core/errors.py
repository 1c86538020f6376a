"""Exception hierarchy shared by every module of the toolkit."""


class CorMotifError(Exception):
    """Base class for all errors raised by the toolkit."""


class InputFormatError(CorMotifError):
    """An input file could not be parsed into a valid dataset."""


class MissingColumnError(InputFormatError):
    """The design references a sample that is absent from the matrix header."""


class DuplicateGeneError(InputFormatError):
    """A gene identifier appears on more than one row."""


class NonNumericCellError(InputFormatError):
    """An expression cell is empty, non-numeric or non-finite."""


class InvalidDesignError(InputFormatError):
    """The study design violates a structural invariant."""


class TooFewReplicatesError(InvalidDesignError):
    """A study has too few samples to estimate a pooled variance."""


class TooFewGenesError(CorMotifError):
    """Too few genes to estimate empirical-Bayes hyperparameters."""


class DegenerateVariancesError(CorMotifError):
    """All sample variances are zero; there is no scale to shrink toward."""


class DegenerateVariancesWarning(UserWarning):
    """All sample variances are equal; the prior df was capped."""


class PatternLimitExceededError(CorMotifError):
    """A saturated pattern mixture would need too many classes."""


class PatternDimensionMismatchError(CorMotifError):
    """Pattern length does not match the number of studies."""


class DimensionMismatchError(CorMotifError):
    """Two inputs that must be aligned have different shapes."""


class UnknownGeneError(CorMotifError):
    """A requested gene identifier does not exist in the data."""


class InvalidConfigError(CorMotifError):
    """A configuration value is out of range or inconsistent."""
