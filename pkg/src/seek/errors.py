"""Exception types raised across the package."""


class SeekError(Exception):
    pass


# numeric
class ShapeMismatch(SeekError, ValueError):
    pass


class MaskAllFalse(SeekError, ValueError):
    pass


class NonScalarLoss(SeekError, ValueError):
    pass


class NonDeterministicClosure(SeekError, RuntimeError):
    pass


# corpus
class MissingFile(SeekError, FileNotFoundError):
    pass


class ParseError(SeekError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class LabelOutOfRange(ParseError):
    def __init__(self, message, line=None, field=None):
        self.field = field
        super().__init__(message, line)


class EmptyDialogue(ParseError):
    pass


class EmptyText(SeekError, ValueError):
    pass


# knowledge
class ProviderMiss(SeekError, KeyError):
    pass


# model
class LengthExceeded(SeekError, ValueError):
    pass


class LengthMismatch(SeekError, ValueError):
    pass


class EmptyFrequencyTable(SeekError, ValueError):
    pass


class NonFinite(SeekError, FloatingPointError):
    pass


class DivergedLoss(NonFinite):
    pass


# evaluation / cli
class EmptyCorpus(SeekError, ValueError):
    pass


class NoNGrams(SeekError, ValueError):
    pass


class UnknownCommand(SeekError):
    pass


class BadFlag(SeekError):
    pass
