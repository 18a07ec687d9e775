"""Exception types shared across the platform."""


class VqaDeskError(Exception):
    """Base class for all platform errors."""


# --- dataset ingestion ---

class MalformedArchive(VqaDeskError):
    pass


class MissingColumn(VqaDeskError):
    pass


class EmptyFile(VqaDeskError):
    pass


class NoAnswers(VqaDeskError):
    pass


# --- feature extraction ---

class UnreadableImage(VqaDeskError):
    pass


class ExtractorUnavailable(VqaDeskError):
    pass


class SchemaViolation(VqaDeskError):
    pass


# --- modeling ---

class EmptyQuestion(VqaDeskError):
    pass


class DimensionMismatch(VqaDeskError):
    pass


class ShapeError(VqaDeskError):
    pass


class CorruptArtifact(VqaDeskError):
    pass


class VersionMismatch(VqaDeskError):
    pass


# --- fine-tuning ---

class EmptyAnswerSpace(VqaDeskError):
    pass


class Diverged(VqaDeskError):
    pass


class Interrupted(VqaDeskError):
    pass


# --- attention aggregation ---

class TokenMapMismatch(VqaDeskError):
    pass
