"""Exception types shared across the package."""


class S4Error(Exception):
    """Base class for every error raised by s4sits."""


class EmptySeries(S4Error):
    pass


class ShapeMismatch(S4Error):
    pass


class ChannelMismatch(S4Error):
    pass


class EmptyDataset(S4Error):
    pass


class InvalidConfig(S4Error):
    pass


class IoFailure(S4Error):
    pass


class CorruptArchive(S4Error):
    pass


class UnsupportedSchema(S4Error):
    pass


class MissingFile(S4Error):
    pass


class ShapeNotPadded(S4Error):
    pass


class EmptyNegativeSet(S4Error):
    pass


class DegenerateMap(S4Error):
    pass


class LabelOutOfRange(S4Error):
    pass


class NonFiniteLoss(S4Error):
    pass


class IncompatibleCheckpoint(S4Error):
    pass


class ModalityMismatch(S4Error):
    pass


class MissingCloudMask(S4Error):
    pass
