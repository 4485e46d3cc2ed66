"""Exception hierarchy shared across the toolkit."""


class TextDpError(Exception):
    """Base class for all toolkit errors."""


# -- corpus / annotations ------------------------------------------------

class ParseError(TextDpError):
    """Malformed input file; message carries the offending line number."""


class UnknownCategoryError(TextDpError):
    """Annotation names a category outside the 17 known placeholders."""


class SpanOutOfBoundsError(TextDpError):
    """Span offsets are inverted or fall outside the document."""


class CrossDocSpanError(TextDpError):
    """Span belongs to a different document than the one it is applied to."""


class InvalidThresholdError(TextDpError):
    """Confidence threshold outside [0, 1)."""


# -- embedding store -----------------------------------------------------

class BadMagicError(TextDpError):
    """File does not start with the TDPE magic bytes."""


class VersionUnsupportedError(TextDpError):
    """TDPE version other than 1."""


class DuplicateTokenError(TextDpError):
    """Vocabulary contains the same token string twice."""


class DuplicateRowError(TextDpError):
    """Two distinct tokens share an identical embedding row (strict mode)."""


class NonFiniteEmbeddingError(TextDpError):
    """Embedding matrix contains NaN or Inf."""


class TruncatedFileError(TextDpError):
    """File ends before the declared records do."""


class DimensionMismatchError(TextDpError):
    """Query vector dimension differs from the store dimension."""


class KTooLargeError(TextDpError):
    """Requested more neighbors than the vocabulary holds."""


class EmptyCandidatesError(TextDpError):
    """No candidates available for nearest-neighbor or selection."""


# -- mechanisms ----------------------------------------------------------

class InvalidEpsilonError(TextDpError):
    """Privacy budget is non-positive, negative, or non-finite."""


class InvalidDimensionError(TextDpError):
    """Noise dimension below 2."""


class InvalidConfigError(TextDpError):
    """Mechanism configuration violates its invariants."""


# -- maskers -------------------------------------------------------------

class RegexCompileError(TextDpError):
    """Mask rule regex failed to compile."""


# -- pipeline ------------------------------------------------------------

class SpecValidationError(TextDpError):
    """Pipeline spec rejected by validation."""


class StoreMissingError(TextDpError):
    """Spec contains a privatize stage but no embedding store was given."""


# -- evaluation ----------------------------------------------------------

class MissingProvenanceError(TextDpError):
    """Output document lacks the provenance needed for leakage alignment."""


# -- synth ---------------------------------------------------------------

class LexiconMissingError(TextDpError):
    """A configured lexicon or template file does not exist."""


class InfeasibleConfigError(TextDpError):
    """Requested corpus statistics cannot be realized by the templates."""
