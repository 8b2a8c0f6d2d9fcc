"""Exception types shared across the package."""


class Pose9DError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(Pose9DError):
    pass


class EmptyMaskError(Pose9DError):
    pass


class DegenerateConfigurationError(Pose9DError):
    pass


class RankDeficientError(Pose9DError):
    pass


class StepOutOfRangeError(Pose9DError):
    pass


class StepOrderViolationError(Pose9DError):
    pass


class ShapeMismatchError(Pose9DError):
    pass


class ImageTooSmallError(Pose9DError):
    pass


class WrongPointCountError(Pose9DError):
    pass


class UnknownCategoryError(Pose9DError):
    pass


class CorruptManifestError(Pose9DError):
    pass


class ChecksumMismatchError(Pose9DError):
    pass


class EmptyBatchError(Pose9DError):
    pass


class InvalidCheckpointError(Pose9DError):
    pass


class InvalidConfigError(Pose9DError):
    pass


class MissingGroundTruthError(Pose9DError):
    def __init__(self, sample_id):
        super().__init__(f"no ground truth for prediction id {sample_id!r}")
        self.sample_id = sample_id
