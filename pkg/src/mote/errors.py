"""Exception hierarchy shared by every mote module."""


class MoteError(Exception):
    """Base class for all errors raised by the package."""

    code = "MoteError"

    def to_dict(self):
        return {"error": self.code, "message": str(self)}


# store
class FormatError(MoteError, ValueError):
    code = "FormatError"


class MagicMismatch(FormatError):
    code = "MagicMismatch"


class TruncatedFile(FormatError):
    code = "TruncatedFile"


class NonFiniteValue(FormatError):
    code = "NonFiniteValue"


class FormatVersionError(FormatError):
    code = "FormatVersionError"


class ManifestError(MoteError, ValueError):
    code = "ManifestError"


class IoFailure(MoteError, OSError):
    code = "IoFailure"


# synth
class DegenerateConfig(MoteError, ValueError):
    code = "DegenerateConfig"


# kde
class EmptyGroup(MoteError, ValueError):
    code = "EmptyGroup"


class MissingCentroid(MoteError, KeyError):
    code = "MissingCentroid"


class TooFewSamples(MoteError, ValueError):
    code = "TooFewSamples"


class EmptyGrid(MoteError, ValueError):
    code = "EmptyGrid"


class MissingKde(MoteError, ValueError):
    code = "MissingKde"


# net
class DimensionMismatch(MoteError, ValueError):
    code = "DimensionMismatch"


class StaleCache(MoteError, RuntimeError):
    code = "StaleCache"


class StepOutOfRange(MoteError, ValueError):
    code = "StepOutOfRange"


class EmptyClass(MoteError, ValueError):
    code = "EmptyClass"


# enroll
class AlreadyEnrolled(MoteError):
    code = "AlreadyEnrolled"


class KdeUnavailable(MoteError):
    code = "KdeUnavailable"


class TrainingDiverged(MoteError, ArithmeticError):
    code = "TrainingDiverged"


# eval / attack
class EmptyScoreSet(MoteError, ValueError):
    code = "EmptyScoreSet"


class SingleGroup(MoteError, ValueError):
    code = "SingleGroup"


class EmptyGallery(MoteError, ValueError):
    code = "EmptyGallery"


class MissingTruth(MoteError, KeyError):
    code = "MissingTruth"


# cli
class ConfigParse(MoteError, ValueError):
    code = "ConfigParse"


class MissingArtifact(MoteError, FileNotFoundError):
    code = "MissingArtifact"
