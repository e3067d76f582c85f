"""Exception hierarchy shared by all modules."""


class CalcError(Exception):
    """Base class for every error raised by the package."""


class NonHermitian(CalcError):
    pass


class NoConvergence(CalcError):
    pass


class Singular(CalcError):
    pass


class IllConditionedEigenbasis(CalcError):
    pass


class BadGeometry(CalcError):
    pass


class ContourTooTight(CalcError):
    pass


class AngleConflict(CalcError):
    pass


class UnstableGenerator(CalcError):
    pass


class HypothesisViolation(CalcError):
    pass


class BranchPoint(CalcError):
    pass


class SpectrumOnCut(CalcError):
    pass


class NeumannSeriesDivergence(CalcError):
    pass


class SingularUV(CalcError):
    pass


class GridMismatch(CalcError):
    pass


class ParseError(CalcError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(CalcError):
    def __init__(self, message, invariant=None):
        self.invariant = invariant
        super().__init__(message)
