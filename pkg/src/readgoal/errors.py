"""Exception hierarchy.

Every error raised by the package derives from :class:`ReadGoalError`. The CLI
maps :class:`DataError` to exit code 3 and :class:`ComputeError` to exit code 4.
"""


class ReadGoalError(Exception):
    pass


class DataError(ReadGoalError):
    pass


class ComputeError(ReadGoalError):
    pass


class MissingColumn(DataError):
    pass


class DanglingReference(DataError):
    pass


class DuplicateTrial(DataError):
    pass


class EmptyTrial(DataError):
    pass


class MalformedCorpus(DataError):
    pass


class UnknownTrial(DataError):
    pass


class MissingFeature(DataError):
    pass


class EmptyTrainingSet(DataError):
    pass


class NoOnTextFixations(DataError):
    pass


class InvalidPercent(DataError):
    pass


class InvalidConfig(DataError):
    pass


class ColumnMismatch(DataError):
    pass


class SingleClass(DataError):
    pass


class TooFewFolds(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class NonConvergence(ComputeError):
    pass


class DivergedTraining(ComputeError):
    pass


class NonFiniteActivation(ComputeError):
    pass


class NonFiniteGradient(ComputeError):
    pass


class SingularDesign(ComputeError):
    pass
