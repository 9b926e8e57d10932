"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An input violates an operation's contract (shape, range, finiteness)."""


class ConfigError(ValueError):
    """A configuration object is internally inconsistent."""


class ConventionMismatchError(ValueError):
    """A spectrum tagged with one scaling convention was handed to the other."""


class EncoderUnavailableError(RuntimeError):
    """An external encoder/caption backend was requested but cannot be loaded.

    Raised instead of silently falling back to the stub.
    """


class ManifestError(ValueError):
    """A dataset manifest failed to load; the message lists offending lines."""
