"""
Exception hierarchy for recshield.

Library code raises these; only the CLI turns them into exit codes
(0 ok, 1 protocol error, 2 configuration/input error).
"""

EXIT_OK = 0
EXIT_PROTOCOL_ERROR = 1
EXIT_CONFIG_ERROR = 2


class RecShieldError(Exception):
    exit_code = EXIT_PROTOCOL_ERROR


class ConfigurationError(RecShieldError):
    exit_code = EXIT_CONFIG_ERROR


class ProtocolError(RecShieldError):
    exit_code = EXIT_PROTOCOL_ERROR


class RatingsFormatError(ConfigurationError, ValueError):
    """Malformed MovieLens input; the message names the offending line."""

    def __init__(self, message: str, line_number: int | None = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class RatingRangeError(RatingsFormatError):
    pass


class EmptyDatasetError(ConfigurationError, ValueError):
    pass


class TrainingError(ConfigurationError):
    pass


class KeyMismatchError(RecShieldError, ValueError):
    """Two operands were produced under different keys."""


class PlaintextRangeError(RecShieldError, ValueError):
    pass


class DepthExceededError(ConfigurationError):
    def __init__(self, level: int, max_depth: int):
        self.level = level
        self.max_depth = max_depth
        super().__init__(f"depth exceeded: level {level} would pass the budget of {max_depth}")


class FramingError(ProtocolError):
    pass


class SessionError(ProtocolError):
    """A party aborted; ``message_type`` names the message it was handling."""

    def __init__(self, message: str, message_type: str | None = None):
        self.message_type = message_type
        if message_type:
            message = f"[{message_type}] {message}"
        super().__init__(message)


class CounterMismatchError(ProtocolError):
    def __init__(self, diff: list[tuple[str, str, int, int]]):
        self.diff = diff
        lines = [f"{party} {op}: expected {expected}, observed {observed}" for party, op, expected, observed in diff]
        super().__init__("operation counters differ from the complexity formulas:\n" + "\n".join(lines))
