"""Exception types raised across the simulator."""


class CrawlSimError(Exception):
    pass


class ConfigError(CrawlSimError, ValueError):
    """Invalid configuration value; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class FetchError(CrawlSimError, LookupError):
    pass


class TraceParseError(CrawlSimError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class TraceValidationError(CrawlSimError):
    pass


class InsufficientDataError(CrawlSimError, ValueError):
    pass


class NumericError(CrawlSimError, ArithmeticError):
    pass


class ForagerStuck(CrawlSimError):
    """Forager has neither a frontier nor a usable starting list."""


class EmptyFrontier(CrawlSimError):
    """Raised by URL ordering when no candidate is available; caller restarts the path."""


class LifecycleError(CrawlSimError):
    pass


class ConsistencyError(CrawlSimError):
    pass


class LogFormatError(CrawlSimError):
    pass
