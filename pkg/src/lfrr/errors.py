"""Exception hierarchy shared by every lfrr module."""


class LFRRError(Exception):
    """Base class for all errors raised by lfrr."""


class DimensionMismatch(LFRRError, ValueError):
    pass


class ValueOutOfRange(LFRRError, ValueError):
    pass


class IndexOutOfRange(LFRRError, IndexError):
    pass


class ChannelMismatch(LFRRError, ValueError):
    pass


class ShapeMismatch(LFRRError, ValueError):
    pass


# LFD file format
class BadMagic(LFRRError, ValueError):
    pass


class BadVersion(LFRRError, ValueError):
    pass


class TruncatedFile(LFRRError, ValueError):
    pass


class DimensionOverflow(LFRRError, ValueError):
    pass


# differentiation
class NotScalar(LFRRError, ValueError):
    pass


class NonFiniteGradient(LFRRError, FloatingPointError):
    pass


# resampling / synthesis
class PositionOutOfRange(LFRRError, ValueError):
    pass


class NotPlanar(LFRRError, ValueError):
    pass


# training / evaluation
class EmptyDataset(LFRRError, ValueError):
    pass


class NonFiniteLoss(LFRRError, FloatingPointError):
    pass


class ConfigMismatch(LFRRError, ValueError):
    pass


class InvalidConfig(LFRRError, ValueError):
    pass
