"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Inputs have incompatible or invalid shapes."""


class FormatError(ValueError):
    """A file or record does not follow its declared format."""


class TrainingDivergedError(RuntimeError):
    """The training loss became non-finite."""


class GroundTruthLeakError(RuntimeError):
    """Ground truth was read while the inference guard was active."""
