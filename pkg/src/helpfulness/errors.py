"""Exception types raised across the package."""


class HelpfulnessError(Exception):
    """Base class for all package errors."""


class DimensionError(HelpfulnessError, ValueError):
    pass


class DegenerateInputError(HelpfulnessError, ValueError):
    """Input with nothing to reduce over (empty axis, fully masked row)."""


class SequenceTooShortError(DegenerateInputError):
    pass


class ConfigurationError(HelpfulnessError, ValueError):
    pass


class ContractError(HelpfulnessError, RuntimeError):
    """A caller broke an operation's precondition (e.g. backward on a non-scalar)."""


class NumericError(HelpfulnessError, ArithmeticError):
    pass


class FormatError(HelpfulnessError, ValueError):
    pass


class CorpusFormatError(FormatError):
    pass


class UndefinedLabelError(HelpfulnessError, ValueError):
    pass


class UndefinedCorrelationError(HelpfulnessError, ValueError):
    pass
