"""Exception hierarchy shared by all posekit modules."""


class PoseKitError(Exception):
    """Base class for all errors raised by posekit."""


# --- pose data / file formats ---

class UnknownFormat(PoseKitError):
    pass


class MalformedHeader(PoseKitError):
    pass


class InconsistentDims(PoseKitError):
    pass


class UnwritableFormat(PoseKitError):
    pass


class IoFailure(PoseKitError):
    pass


class DimMismatch(PoseKitError):
    pass


# --- frame streams ---

class UnknownBackend(PoseKitError):
    pass


class UnreadableSource(PoseKitError):
    pass


class DecodeFailure(PoseKitError):
    def __init__(self, message: str, frame_index: int | None = None):
        super().__init__(message)
        self.frame_index = frame_index


class OutOfRange(PoseKitError):
    pass


# --- geometry / calibration ---

class DegenerateDenominator(PoseKitError):
    pass


class InsufficientViews(PoseKitError):
    pass


class RankDeficient(PoseKitError):
    pass


class TooFewPoints(PoseKitError):
    pass


class CoplanarPoints(PoseKitError):
    pass


class MalformedCsv(PoseKitError):
    pass


class EmptyAnnotationSet(PoseKitError):
    pass


class NotEnoughAnnotatedFrames(PoseKitError):
    pass


class CollinearPoints(PoseKitError):
    pass


# --- filters ---

class EmptySequence(PoseKitError):
    pass


class EvenWindow(PoseKitError):
    pass


# --- pipeline ---

class MalformedManifest(PoseKitError):
    pass


class KindMismatch(PoseKitError):
    pass


class StageFailure(PoseKitError):
    def __init__(self, stage_index: int, cause: Exception, partial_report=None):
        super().__init__(f"stage {stage_index} failed: {cause}")
        self.stage_index = stage_index
        self.cause = cause
        self.partial_report = partial_report


class ExternalProcessError(PoseKitError):
    def __init__(self, message: str, exit_code: int, stderr: str = ""):
        super().__init__(message)
        self.exit_code = exit_code
        self.stderr = stderr


# --- metrics ---

class ShapeMismatch(PoseKitError):
    pass


class NoValidPairs(PoseKitError):
    pass


class MissingReferencePart(PoseKitError):
    pass


# --- behavior analysis ---

class NoWalls(PoseKitError):
    pass


class DegenerateArena(PoseKitError):
    pass


class Not3D(PoseKitError):
    pass


class BadBins(PoseKitError):
    pass


class InvalidParts(PoseKitError):
    pass


class CoincidentParts(PoseKitError):
    pass


class SpikeOutOfRange(PoseKitError):
    pass


# --- annotations / service ---

class MissingEndpoints(PoseKitError):
    pass


class PortInUse(PoseKitError):
    pass
