"""Exception hierarchy.

The CLI maps the three top-level families to process exit codes:
``ConfigError`` -> 2, ``DataError`` -> 3, ``NumericError`` -> 4.
"""


class MLTRError(Exception):
    pass


class ConfigError(MLTRError):
    pass


class DataError(MLTRError):
    pass


class NumericError(MLTRError):
    pass


class MalformedLine(DataError):
    def __init__(self, line_no, reason):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}")


class DimensionMismatch(DataError):
    pass


class InsufficientQueries(DataError):
    pass


class InsufficientItems(DataError):
    pass


class InsufficientPositives(DataError):
    pass


class NoUsableQueries(DataError):
    pass


class NonFiniteLoss(NumericError):
    def __init__(self, query_id, step):
        self.query_id = query_id
        self.step = step
        super().__init__(f"non-finite loss for query {query_id!r} at step {step}")
