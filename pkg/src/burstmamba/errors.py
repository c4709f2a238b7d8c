"""Exception types raised across the package."""


class BurstMambaError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(BurstMambaError, ValueError):
    pass


class BadLabel(BurstMambaError, ValueError):
    pass


class ByteOutOfRange(BurstMambaError, ValueError):
    pass


# -- ingest --------------------------------------------------------------

class MalformedHeader(BurstMambaError):
    pass


class TruncatedPacket(BurstMambaError):
    pass


class ShortHeader(BurstMambaError, ValueError):
    pass


class EmptyFlow(BurstMambaError, ValueError):
    pass


class BadRatios(BurstMambaError, ValueError):
    pass


class BadMagic(BurstMambaError):
    pass


class LengthMismatch(BurstMambaError):
    pass


class TruncatedFile(BurstMambaError):
    pass


# -- training / config ---------------------------------------------------

class DatasetEmpty(BurstMambaError):
    pass


class ClassCountMismatch(BurstMambaError, ValueError):
    pass


class ConfigError(BurstMambaError, ValueError):
    """Invalid run configuration. ``key`` holds the offending dotted key."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class ConfigMismatch(BurstMambaError):
    pass
