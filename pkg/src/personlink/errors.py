"""Shared exception types, mapped to CLI exit codes in cli.py."""


class PersonlinkError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(PersonlinkError):
    """A corpus/KB/pair file line could not be parsed."""

    def __init__(self, path, line_no, reason):
        self.path = str(path)
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"{self.path}:{line_no}: {reason}")


class RecordValidationError(PersonlinkError):
    """A parsed record violates a structural invariant."""


class ConfigError(PersonlinkError):
    """Invalid or inconsistent run configuration."""


class TransportError(PersonlinkError):
    """The encoder bridge could not be reached."""

    def __init__(self, endpoint, retries, reason):
        self.endpoint = endpoint
        self.retries = retries
        super().__init__(
            f"bridge at {endpoint} unreachable after {retries} attempts: {reason}"
        )


class WireProtocolError(PersonlinkError):
    """The encoder bridge sent a malformed or inconsistent response."""
