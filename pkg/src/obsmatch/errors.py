"""Exception types shared across the pipeline.

Every error carries a ``code`` used as the CLI exit status (and echoed in the
machine-readable error JSON): 2 config, 3 imbalance under --strict, then one
code per pipeline stage.
"""


class ObsMatchError(Exception):
    code = 1


class ConfigError(ObsMatchError):
    code = 2


class ImbalanceError(ObsMatchError):
    """Raised by the CLI in strict mode when post-matching balance fails."""

    code = 3


class DataError(ObsMatchError):
    code = 4


class FitError(ObsMatchError):
    code = 5


class MatchError(ObsMatchError):
    code = 6


class EstimateError(ObsMatchError):
    code = 7


class DiagnosticsError(ObsMatchError):
    code = 8


class BenchError(ObsMatchError):
    code = 9


class InvalidArgument(ConfigError):
    pass


# -- dataset ----------------------------------------------------------------

class MissingColumn(DataError):
    pass


class NonBinaryTreatment(DataError):
    pass


class UnparseableCell(DataError):
    def __init__(self, row: int, col: str):
        super().__init__(f"unparseable cell at row {row}, column {col!r}")
        self.row = row
        self.col = col


class EmptyTreatmentArm(DataError):
    pass


class AllMissingColumn(DataError):
    pass


class UnknownColumn(DataError):
    pass


class MissingValues(DataError):
    """A column required to be fully observed has missing entries."""


# -- propensity -------------------------------------------------------------

class Separation(FitError):
    pass


class SingularDesign(FitError):
    pass


class NotConverged(FitError):
    def __init__(self, max_iter: int):
        super().__init__(f"IRLS did not converge within {max_iter} iterations")
        self.max_iter = max_iter


# -- distance ---------------------------------------------------------------

class LengthMismatch(MatchError):
    pass


class SingularSigma(MatchError):
    pass


class ScoreOutOfRange(MatchError):
    pass


class DegenerateVariance(MatchError):
    pass


# -- matchers ---------------------------------------------------------------

class NoControls(MatchError):
    pass


class InvalidK(MatchError):
    pass


class Infeasible(MatchError):
    pass


class EmptySubclassArm(MatchError):
    def __init__(self, subclass: int, arm: str):
        super().__init__(f"subclass {subclass} has no {arm} units")
        self.subclass = subclass
        self.arm = arm


class EverythingDiscarded(MatchError):
    pass


# -- weighting --------------------------------------------------------------

class DegenerateScore(EstimateError):
    pass


class WrongResultKind(EstimateError):
    pass


# -- diagnostics ------------------------------------------------------------

class ZeroVariance(DiagnosticsError):
    pass


class EmptyGroup(DiagnosticsError):
    pass


class IoError(DiagnosticsError):
    pass


# -- estimation -------------------------------------------------------------

class NoOutcome(EstimateError):
    pass


class EmptyArm(EstimateError):
    pass


class TooManyFailures(EstimateError):
    pass


# -- simbench ---------------------------------------------------------------

class InvalidScenario(BenchError):
    pass


class ZeroInitialBias(BenchError):
    pass
