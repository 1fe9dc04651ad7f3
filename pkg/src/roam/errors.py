"""Exception types. Every error carries a stable ``code`` string."""


class RoamError(Exception):
    code = "ROAM_ERROR"

    def __init__(self, message: str = "", code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code


class ShapeMismatch(RoamError, ValueError):
    code = "SHAPE_MISMATCH"


class LabelRangeError(RoamError, ValueError):
    code = "OUT_OF_RANGE_LABEL"


class ChannelMismatch(RoamError, ValueError):
    code = "CHANNEL_MISMATCH"


class DegeneratePixel(RoamError, ValueError):
    code = "DEGENERATE_PIXEL"


class MixupError(RoamError, ValueError):
    """NONPOSITIVE_ALPHA / EMPTY_KAPPA_SET."""


class LayerError(RoamError, KeyError):
    """UNKNOWN_LAYER / MISSING_SKIP."""

    def __str__(self):
        return Exception.__str__(self)


class SplitError(RoamError, ValueError):
    code = "BAD_MARKER"


class DatasetError(RoamError, ValueError):
    """EMPTY_DATASET, UNSATISFIABLE_SPEC, FRACTION_SUM, MALFORMED_FILE, LABEL_RANGE."""


class CheckpointError(RoamError):
    """INCOMPATIBLE_CHECKPOINT / MISSING_CHECKPOINT."""


class TrainingError(RoamError):
    """NO_UNLABELED_DATA."""


class ConfigError(RoamError, ValueError):
    code = "CONFIG_INVALID"

    def __init__(self, message: str = "", key: str | None = None):
        super().__init__(message)
        self.key = key


class EmptyMask(RoamError, ValueError):
    code = "EMPTY_MASK"
