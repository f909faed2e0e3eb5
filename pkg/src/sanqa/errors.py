"""Exception types shared across the package."""


class SanError(Exception):
    """Base class for all sanqa errors."""


class DimensionError(SanError):
    """Operand shapes do not conform to an operation's signature."""


class NumericError(SanError):
    """A computation produced non-finite values."""


class ContractError(SanError):
    """An argument violates an operation's documented contract."""


class VocabError(SanError):
    """Token id or token outside the vocabulary."""


class FormatError(SanError):
    """Malformed binary or text file."""


class GenerationError(SanError):
    """Scene/question generation could not satisfy its constraints."""


class TaxonomyError(SanError):
    """Word missing from the similarity taxonomy."""


class DataError(SanError):
    """Dataset files missing, malformed, or inconsistent."""


class SearchError(SanError):
    """Hyperparameter search found no usable candidate."""


class ConfigError(SanError):
    """Unknown or invalid configuration key/value."""
