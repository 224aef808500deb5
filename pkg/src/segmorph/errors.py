"""Exception hierarchy shared by all segmorph modules."""


class SegmorphError(Exception):
    """Base class for every error raised by this package."""


# -- volume I/O ---------------------------------------------------------------

class VolumeIOError(SegmorphError):
    pass


class HeaderCorrupt(VolumeIOError):
    """NIfTI header failed a structural check (size, magic, dims)."""


class UnsupportedDatatype(VolumeIOError):
    pass


class NonIntegralLabels(VolumeIOError):
    """Float-typed voxel data holds values that are not integers within 1e-6."""


class ScalingUnsupported(VolumeIOError):
    pass


class LengthMismatch(SegmorphError):
    """Byte length or sample length does not match what was declared."""


class SidecarInvalid(VolumeIOError):
    pass


class UncoveredLabel(SegmorphError):
    """A nonzero label in a map has no entry in the label dictionary."""


class DictionaryInvalid(SegmorphError):
    pass


# -- metrics / morphometry ----------------------------------------------------

class GridMismatch(SegmorphError):
    """Two volumes do not share dims and spacing."""


class EmptyMask(SegmorphError):
    pass


class ScaleTooLarge(SegmorphError):
    pass


class TooFewScales(SegmorphError):
    pass


class InsufficientVoxels(SegmorphError):
    pass


class ScaleRangeTooNarrow(SegmorphError):
    pass


class GridTooSmall(SegmorphError):
    pass


class LevelOutOfRange(SegmorphError):
    pass


# -- statistics ---------------------------------------------------------------

class StatsError(SegmorphError):
    pass


class TooFewSamples(StatsError):
    pass


class ZeroVariance(StatsError):
    pass


class IncompleteMatrix(StatsError):
    pass


class DegenerateX(StatsError):
    pass


class NonConvergence(StatsError):
    pass


# -- pipeline -----------------------------------------------------------------

class ManifestInvalid(SegmorphError):
    pass


class IoFailure(SegmorphError):
    pass
