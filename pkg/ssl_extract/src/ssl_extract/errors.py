"""Error types with actionable messages; the CLI maps them to exit code 2."""


class SslExtractError(Exception):
    """Base class for everything this tool raises on purpose."""


class ModelLoadError(SslExtractError):
    pass


class InvalidAudio(SslExtractError):
    pass


class RateMismatch(SslExtractError):
    pass


class DimsMismatch(SslExtractError):
    pass
