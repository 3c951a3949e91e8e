"""Exception types shared across the package."""


class DataLoadError(Exception):
    """A dataset file is missing, malformed, or internally inconsistent."""


class ModelFormatError(Exception):
    """A model or cache binary fails magic/version/size validation."""


class StaleCacheError(Exception):
    """A score cache was built from a different model than the one in use."""


class TrainingError(Exception):
    """Training failed, e.g. the loss became non-finite or the data is degenerate."""


class UnsupportedVariantError(ValueError):
    """The requested explanation variant is unavailable for this model."""


class UnsupportedAugmentationError(ValueError):
    """The requested augmentation does not apply to this dataset."""
