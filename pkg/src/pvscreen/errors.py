"""Exception hierarchy shared by every pvscreen module."""


class PVScreenError(Exception):
    """Base class for all package errors."""


class ConfigError(PVScreenError, ValueError):
    """A configuration value violates its invariants."""


class ImageReadError(PVScreenError, OSError):
    """An image file could not be opened."""


class ImageFormatError(PVScreenError, ValueError):
    """An image file exists but its encoding is unsupported or corrupt."""


class ModelFormatError(PVScreenError, ValueError):
    """A model container is malformed or of the wrong kind."""


class IncompatibleWeightsError(ModelFormatError):
    """Stored tensors do not match the shapes required by a config."""


class ContractError(PVScreenError, RuntimeError):
    """An API precondition between paired calls was violated."""


class ManifestError(PVScreenError, ValueError):
    """A dataset directory does not follow the expected layout."""
