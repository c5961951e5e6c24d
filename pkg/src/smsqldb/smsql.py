"""SMS-SQL: a four-token query language that fits in one text message.

A query names a database, a table, an attribute and a target value::

    dbiris tbiris atsepl va8

Each token carries a two-character prefix (``db``, ``tb``, ``at``, ``va``);
tokens may appear in any order. The query is equivalent to::

    SELECT sepl FROM iris.iris WHERE sepl = 8
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

from .errors import (
    IncompleteQueryError,
    MessageLengthError,
    QueryError,
    QuerySyntaxError,
    QueryValueError,
)
from .microdb import ReportMode, SpeciesLabel

SMS_MAX_CHARS = 160

PREFIXES = ("db", "tb", "at", "va")
_FIELDS = {"db": "database", "tb": "table", "at": "attribute", "va": "target"}
_IDENT_RE = re.compile(r"[a-z0-9]+", re.ASCII)
_DIGITS_RE = re.compile(r"[0-9]+", re.ASCII)

# Legacy fixed-offset layout: 'd' of "db", first database letter, value digit.
VALUE_OFFSET = 23
MODE_OFFSETS = (0, 2)


@dataclass(frozen=True)
class ParsedQuery:
    database: str
    table: str
    attribute: str
    target: int
    report_mode: ReportMode | None = None


def parse_sms(body: str | bytes) -> ParsedQuery:
    """Parse one SMS body into a :class:`ParsedQuery`.

    Every failure is a :class:`QueryError` subclass whose message is short
    enough to send back to the user.
    """
    if isinstance(body, (bytes, bytearray)):
        try:
            body = bytes(body).decode("utf-8")
        except UnicodeDecodeError:
            raise QuerySyntaxError("body is not valid UTF-8") from None
    if not isinstance(body, str):
        raise QuerySyntaxError("body must be text")
    if len(body) > SMS_MAX_CHARS:
        raise MessageLengthError(f"body has {len(body)} chars, limit is {SMS_MAX_CHARS}")

    found: dict[str, str] = {}
    for token in body.split():
        prefix = token[:2].lower()
        if prefix not in _FIELDS:
            raise QuerySyntaxError(f"unknown token {_clip(token)!r}")
        if prefix in found:
            raise QuerySyntaxError(f"duplicate {prefix} token")
        ident = token[2:].lower()
        if prefix == "va":
            if not _DIGITS_RE.fullmatch(ident):
                raise QueryValueError(f"value must be a non-negative integer: {_clip(token[2:])!r}")
        elif not _IDENT_RE.fullmatch(ident):
            raise QuerySyntaxError(f"bad {prefix} name {_clip(token[2:])!r}")
        found[prefix] = ident

    missing = [p for p in PREFIXES if p not in found]
    if missing:
        raise IncompleteQueryError(missing)
    return ParsedQuery(
        database=found["db"],
        table=found["tb"],
        attribute=found["at"],
        target=int(found["va"]),
    )


def _clip(text: str, limit: int = 24) -> str:
    return text if len(text) <= limit else text[: limit - 3] + "..."


def to_canonical_sql(q: ParsedQuery) -> str:
    return f"SELECT {q.attribute} FROM {q.database}.{q.table} WHERE {q.attribute} = {q.target}"


def decode_fixed_offset(body: str) -> tuple[int, tuple[int, int]]:
    """Decode a query the way the original firmware did: by character offset.

    Returns the single-digit target at offset 23 and the two mode codes
    ``ord(c) - 48`` for offsets 0 and 2 (52/57 for ``dbi...``, 52/69 for
    ``dbu...``). Only valid for queries built from four-letter names.
    """
    if len(body) <= VALUE_OFFSET:
        raise MessageLengthError(
            f"fixed-offset decoding needs at least {VALUE_OFFSET + 1} chars, got {len(body)}"
        )
    target = ord(body[VALUE_OFFSET]) - 48
    if not 0 <= target <= 9:
        raise QueryValueError(f"character {VALUE_OFFSET} is not a digit: {body[VALUE_OFFSET]!r}")
    codes = (ord(body[MODE_OFFSETS[0]]) - 48, ord(body[MODE_OFFSETS[1]]) - 48)
    return target, codes


@dataclass(frozen=True)
class Found:
    species: SpeciesLabel


@dataclass(frozen=True)
class NearestApproximate:
    species: SpeciesLabel
    distance: int


@dataclass(frozen=True)
class NotFound:
    pass


Outcome = Union[Found, NearestApproximate, NotFound]

VERBOSE_HEADER = "Species found is:"
NOT_FOUND_TEXT = "No species found"


def format_report(outcome: Outcome, mode: ReportMode) -> list[str]:
    if isinstance(outcome, NotFound):
        return [NOT_FOUND_TEXT]
    if mode is ReportMode.TERSE:
        return [outcome.species.short_code]
    lines = [VERBOSE_HEADER, outcome.species.long_name]
    if isinstance(outcome, NearestApproximate):
        lines.append(f"(nearest, distance={outcome.distance})")
    return lines


@dataclass(frozen=True)
class QueryReport:
    outcome: Outcome
    rendered: tuple[str, ...]

    @classmethod
    def build(cls, outcome: Outcome, mode: ReportMode) -> QueryReport:
        return cls(outcome, tuple(format_report(outcome, mode)))


def error_text(exc: Exception) -> str:
    """Render an error as a single reply line of at most one SMS."""
    text = f"ERR: {exc}"
    return text if len(text) <= SMS_MAX_CHARS else text[: SMS_MAX_CHARS - 3] + "..."


__all__ = [
    "Found",
    "NearestApproximate",
    "NotFound",
    "Outcome",
    "ParsedQuery",
    "QueryError",
    "QueryReport",
    "decode_fixed_offset",
    "error_text",
    "format_report",
    "parse_sms",
    "to_canonical_sql",
]
