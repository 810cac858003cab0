"""Exception hierarchy shared by all modules.

Every error carries an ``exit_code`` so the command line front-end can map
failures onto its documented codes (1 validation, 2 missing artifact,
3 internal).
"""


class AsrError(Exception):
    exit_code = 3


class ValidationError(AsrError):
    exit_code = 1


# audio
class NotWav(ValidationError):
    pass


class UnsupportedEncoding(ValidationError):
    pass


class TruncatedFile(ValidationError):
    pass


class UnsupportedRate(ValidationError):
    pass


class BadConfig(ValidationError):
    pass


# features
class DimensionMismatch(ValidationError):
    pass


# lexicon / language model
class DuplicateUttId(ValidationError):
    pass


class MalformedLine(ValidationError):
    pass


class EmptyPronunciation(ValidationError):
    pass


class BadOrder(ValidationError):
    pass


class MalformedArpa(ValidationError):
    pass


# fst
class FstError(AsrError):
    pass


class SymbolTableMismatch(FstError):
    pass


class SemiringMismatch(FstError):
    pass


class NegativeEpsilonCycle(FstError):
    pass


class NotAcceptor(FstError):
    pass


class DeterminizationBudgetExceeded(FstError):
    pass


class NotDeterministic(FstError):
    pass


class EmptyFst(FstError):
    pass


class WrongSemiring(FstError):
    pass


# graphs
class EmptyLexicon(ValidationError):
    pass


class BadContextWidth(ValidationError):
    pass


class EmptyAlignments(ValidationError):
    pass


# gmm
class EmptyData(ValidationError):
    pass


class AlignmentFailed(AsrError):
    pass


class InsufficientData(AsrError):
    pass


# chain
class EmptyAlignment(ValidationError):
    pass


class DiscardChunk(AsrError):
    pass


class NumericalFailure(AsrError):
    pass


class InputTooShort(ValidationError):
    pass


class Diverged(AsrError):
    pass


# decoding / scoring
class NoPathSurvived(AsrError):
    pass


class EmptyReference(ValidationError):
    pass


class EmptyCorpus(ValidationError):
    pass


# pipeline
class MissingArtifact(AsrError):
    exit_code = 2


class ValidationFailed(ValidationError):
    pass
