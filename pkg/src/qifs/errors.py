"""Exception hierarchy.

Everything derives from :class:`QifsError` (itself a ``ValueError``) so callers
can catch the whole family; the CLI maps :class:`SolverPreconditionError`
subclasses to exit code 3 and everything else to exit code 2.
"""


class QifsError(ValueError):
    pass


class SolverPreconditionError(QifsError):
    pass


# txmodel
class AddressNotInTx(QifsError):
    pass


# ingest
class ParseError(QifsError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class InvariantError(ParseError):
    pass


class UnknownLabel(ParseError):
    pass


class DuplicateAddress(ParseError):
    pass


class NonMonotonicDates(ParseError):
    pass


class NonPositiveRate(ParseError):
    pass


class EmptyTable(QifsError):
    pass


class InvalidConfig(QifsError):
    pass


# features
class NonPositiveAmount(QifsError):
    pass


class EmptyHistory(QifsError):
    pass


class DegenerateOutcome(QifsError):
    pass


# qubo_select
class LengthMismatch(QifsError):
    pass


class TooFewSamples(QifsError):
    pass


class AlphaOutOfRange(QifsError):
    pass


class TooManyFeatures(SolverPreconditionError):
    pass


class UnknownFeatureName(QifsError):
    pass


# forest
class EmptyLabels(QifsError):
    pass


class NoFeaturesSelected(QifsError):
    pass


class MaskMismatch(QifsError):
    pass


class SingleClass(QifsError):
    pass


class ClassTooSmall(QifsError):
    pass
