"""Exception hierarchy shared by every layer of the node."""

from __future__ import annotations


class SmsDbError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SmsDbError, ValueError):
    """A configuration document is malformed or incomplete."""


class ConflictError(ConfigError):
    """A database or table name is declared twice."""


class SchemaError(SmsDbError, ValueError):
    """Row width or attribute name does not match the table schema."""


class CsvParseError(SmsDbError, ValueError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class RangeError(SmsDbError, ValueError):
    """A value falls outside its attribute range and clamping is off."""


class BoundsError(SmsDbError, IndexError):
    """Row index outside ``[0, row_count)``."""


class UnclassifiableError(SmsDbError, ValueError):
    def __init__(self, key_value: int) -> None:
        super().__init__(f"unclassifiable key value {key_value}")
        self.key_value = key_value


class UnknownNameError(SmsDbError, LookupError):
    """A database, table or attribute name is not in the catalog."""


class UnknownAttributeError(UnknownNameError, SchemaError):
    """The queried attribute is not part of the table schema."""


class EmptyTableError(SmsDbError, ValueError):
    """A search was requested against a table with no records."""


class QueryError(SmsDbError, ValueError):
    """Base class for SMS-SQL parse failures; ``str(err)`` is the reply reason."""


class MessageLengthError(QueryError):
    """Body longer than one SMS, or too short for fixed-offset decoding."""


class QuerySyntaxError(QueryError):
    pass


class IncompleteQueryError(QueryError):
    def __init__(self, missing: list[str]) -> None:
        super().__init__(f"incomplete query: missing {', '.join(missing)}")
        self.missing = missing


class QueryValueError(QueryError):
    pass


class FrameFormatError(SmsDbError, ValueError):
    """A wire line cannot be decoded into a frame (or a frame cannot be encoded)."""


class TransportError(SmsDbError):
    pass


class TransportStoppedError(TransportError):
    """Operation attempted on a transport that is not running."""


class BroadcastError(TransportError):
    """A broadcast failed part-way; ``sent`` frames already left the outbox."""

    def __init__(self, sent: int, cause: Exception) -> None:
        super().__init__(f"broadcast aborted after {sent} frame(s): {cause}")
        self.sent = sent
        self.cause = cause
