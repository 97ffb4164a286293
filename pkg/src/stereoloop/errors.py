"""Exception hierarchy shared by all stereoloop modules."""


class StereoLoopError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(StereoLoopError, ValueError):
    pass


class NonPositiveDepth(StereoLoopError, ValueError):
    pass


class ImageTooSmall(StereoLoopError, ValueError):
    pass


class PatchOutOfBounds(StereoLoopError, ValueError):
    pass


class ZeroDisparity(StereoLoopError, ValueError):
    pass


class LengthMismatch(StereoLoopError, ValueError):
    pass


class TooFewCorrespondences(StereoLoopError):
    pass


class NoConsensus(StereoLoopError):
    pass


class DegenerateGeometry(StereoLoopError):
    pass


class TooFewDescriptors(StereoLoopError, ValueError):
    pass


class EmptyCluster(StereoLoopError):
    pass


class NotNormalized(StereoLoopError, ValueError):
    pass


class VocabularyFormatError(StereoLoopError):
    pass


class BadMagic(VocabularyFormatError):
    pass


class VersionMismatch(VocabularyFormatError):
    pass


class Truncated(VocabularyFormatError):
    pass


class OutOfOrderFrame(StereoLoopError, ValueError):
    pass


class NoPreviousFrame(StereoLoopError):
    pass


class EmptyIsland(StereoLoopError, ValueError):
    pass


class EmptyTrajectory(StereoLoopError, ValueError):
    pass


class OutOfSpan(StereoLoopError, ValueError):
    pass


class InfeasibleTrajectory(StereoLoopError):
    pass


class DatasetError(StereoLoopError):
    pass
