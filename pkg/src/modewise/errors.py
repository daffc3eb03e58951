"""Exception hierarchy shared across the toolkit."""


class ModewiseError(Exception):
    """Base class for all toolkit errors."""


class CmapssFormatError(ModewiseError):
    """A data file does not conform to the 26-column whitespace format."""


class DataIntegrityError(ModewiseError):
    """Loaded data violates a structural invariant (cycle gaps, stray NaN, ...)."""


class ConfigError(ModewiseError):
    """A configuration value or combination is unusable."""


class MissingArtifactError(ModewiseError):
    """A pipeline stage requires an artifact that has not been produced yet."""


class TrainingDivergedError(ModewiseError):
    """Training hit a non-finite loss; carries the last finite parameter state."""

    def __init__(self, message, last_good=None, epoch=None):
        super().__init__(message)
        self.last_good = last_good
        self.epoch = epoch
