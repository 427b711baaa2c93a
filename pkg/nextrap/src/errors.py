"""
Exception hiërarchie voor nextrap

Twee takken:
- DataError: ongeldige of inconsistente data / bestanden (CLI exit code 2)
- UsageError: verkeerd gebruik van de CLI (exit code 1)
"""


class NextrapError(Exception):
    """Root van alle nextrap fouten"""


class UsageError(NextrapError):
    """Ongeldige CLI flags of combinaties"""


class DataError(NextrapError):
    """Fout in invoerdata of bestandsinhoud"""


class KMismatchWarning(UserWarning):
    """Bundle getraind met een andere k dan de gevraagde extrapolatieafstand"""


# linalg-core
class NonFiniteMatrix(DataError):
    pass


class SizeExceeded(DataError):
    pass


class DegenerateMatrix(DataError):
    pass


class NotConverged(DataError):
    pass


# checkpoint-store
class CheckpointIOError(DataError, OSError):
    """Bestand ontbreekt of is niet lees/schrijfbaar"""


class FormatError(DataError):
    """Bestand is er wel, maar de inhoud klopt niet"""


class ShapeMismatch(DataError):
    pass


class MissingTarget(DataError):
    pass


class NonMonotonicSteps(DataError):
    pass


class SchemaMismatch(DataError):
    """Tensor namen/shapes verschillen tussen checkpoints"""


# delta-extraction / diagnostics
class IndexOutOfRange(DataError):
    pass


class InsufficientCheckpoints(DataError):
    pass


class NonPositiveImprovement(DataError):
    pass


# trajectory-lab / predictor
class DivergedTraining(DataError):
    pass


class EmptyGroup(DataError):
    pass


class DimensionMismatch(DataError):
    pass


# extrapolation-engine
class MissingPredictor(DataError):
    pass


class ZeroNormPrediction(DataError):
    pass


class EmptyTrajectory(DataError):
    pass
