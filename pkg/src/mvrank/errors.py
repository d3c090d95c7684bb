"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Non-finite, out-of-range or otherwise malformed input values."""


class ConfigurationError(ValueError):
    """A pre-rank spec, scenario or run configuration that does not fit the data."""


class SequencingError(RuntimeError):
    """Sequential updates delivered out of time order."""


class InvalidStateError(RuntimeError):
    """An operation was requested on an object that is not ready for it."""


class ArchiveError(ValueError):
    """A forecast archive that cannot be parsed."""
