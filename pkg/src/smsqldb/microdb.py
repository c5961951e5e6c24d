"""In-memory micro-database: schema catalog, CSV ingestion, record access.

Tables hold fixed-width rows of small unsigned integers. Real-valued
measurements are discretized with round-half-up and clamped into each
attribute's range. A table may carry a capacity, in which case sensor
upserts behave like a ring buffer and overwrite the oldest row.
"""

from __future__ import annotations

import csv
import json
import re
import threading
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal, InvalidOperation
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import (
    BoundsError,
    ConfigError,
    ConflictError,
    CsvParseError,
    RangeError,
    SchemaError,
    UnclassifiableError,
    UnknownAttributeError,
    UnknownNameError,
)

TOKEN_RE = re.compile(r"[a-z0-9]+", re.ASCII)

DEFAULT_MIN_VALUE = 4
DEFAULT_MAX_VALUE = 9
DEFAULT_CAPACITY = 16

# Stored sepal lengths of the sixteen-row demo table, in row order.
APPENDIX_KEY_VALUES = (5, 4, 7, 6, 7, 7, 4, 6, 5, 4, 7, 6, 7, 7, 4, 7)


class SpeciesLabel(Enum):
    IRIS_SETOSA = ("Iris-Setosa", "IS")
    IRIS_VERSICOLOR = ("Iris-Versicolor", "IVS")
    IRIS_VIRGINICA = ("Iris-Virginica", "IVG")

    @property
    def long_name(self) -> str:
        return self.value[0]

    @property
    def short_code(self) -> str:
        return self.value[1]


_KEY_TO_SPECIES = {
    4: SpeciesLabel.IRIS_SETOSA,
    5: SpeciesLabel.IRIS_SETOSA,
    6: SpeciesLabel.IRIS_VERSICOLOR,
    7: SpeciesLabel.IRIS_VIRGINICA,
    8: SpeciesLabel.IRIS_VIRGINICA,
}

_CSV_SPECIES = {"iris-setosa", "iris-versicolor", "iris-virginica"}


def classify_species(key_value: int) -> SpeciesLabel:
    """Map a discretized sepal length onto its species label.

    Only 4..8 are classifiable; anything else raises
    :class:`UnclassifiableError` instead of silently returning nothing.
    """
    try:
        return _KEY_TO_SPECIES[key_value]
    except (KeyError, TypeError):
        raise UnclassifiableError(key_value) from None


class ReportMode(str, Enum):
    VERBOSE = "verbose"
    TERSE = "terse"


@dataclass(frozen=True)
class AttributeSchema:
    name: str
    min_value: int = DEFAULT_MIN_VALUE
    max_value: int = DEFAULT_MAX_VALUE
    is_key: bool = False

    def __post_init__(self) -> None:
        if not isinstance(self.name, str) or not TOKEN_RE.fullmatch(self.name):
            raise SchemaError(f"attribute name must be lowercase alphanumeric: {self.name!r}")
        for bound in (self.min_value, self.max_value):
            if isinstance(bound, bool) or not isinstance(bound, int) or bound < 0:
                raise SchemaError(f"attribute {self.name}: bounds must be unsigned integers")
        if self.min_value > self.max_value:
            raise SchemaError(
                f"attribute {self.name}: min_value {self.min_value} > max_value {self.max_value}"
            )

    def clamp(self, value: int) -> int:
        return min(max(value, self.min_value), self.max_value)

    def contains(self, value: int) -> bool:
        return self.min_value <= value <= self.max_value


@dataclass(frozen=True)
class Record:
    """One stored row. ``label`` is ``None`` when the key is unclassifiable."""

    values: tuple[int, ...]
    label: SpeciesLabel | None = None


def round_half_up(value: Any) -> int:
    """Round a number (or its decimal text) to the nearest integer, halves up."""
    if isinstance(value, bool):
        raise ValueError(f"not a number: {value!r}")
    if isinstance(value, int):
        return value
    text = repr(value) if isinstance(value, float) else str(value).strip()
    try:
        d = Decimal(text)
    except InvalidOperation:
        raise ValueError(f"not a number: {value!r}") from None
    if not d.is_finite():
        raise ValueError(f"not a finite number: {value!r}")
    return int(d.to_integral_value(rounding=ROUND_HALF_UP))


class Table:
    """Named table of fixed-width unsigned-integer rows.

    Writes are serialized by an internal lock; readers take snapshots and
    never see a half-written row because records are immutable and are
    swapped in whole.
    """

    def __init__(
        self,
        name: str,
        schema: Sequence[AttributeSchema],
        records: Iterable[Record | Sequence[int]] = (),
        capacity: int | None = None,
    ) -> None:
        if not TOKEN_RE.fullmatch(name or ""):
            raise SchemaError(f"table name must be lowercase alphanumeric: {name!r}")
        schema = tuple(schema)
        if not schema:
            raise SchemaError(f"table {name}: schema has no attributes")
        names = [a.name for a in schema]
        if len(set(names)) != len(names):
            raise SchemaError(f"table {name}: duplicate attribute names")
        keys = [i for i, a in enumerate(schema) if a.is_key]
        if len(keys) != 1:
            raise SchemaError(f"table {name}: expected exactly one key attribute, got {len(keys)}")
        if capacity is not None and capacity < 1:
            raise SchemaError(f"table {name}: capacity must be >= 1")

        self.name = name
        self.schema = schema
        self.capacity = capacity
        self.key_index = keys[0]
        self._index = {a.name: i for i, a in enumerate(schema)}
        self._lock = threading.Lock()
        self._records: list[Record] = []
        self._cursor = 0
        for rec in records:
            values = rec.values if isinstance(rec, Record) else rec
            self._records.append(self.make_record(values))
        if capacity is not None and len(self._records) > capacity:
            raise SchemaError(
                f"table {name}: {len(self._records)} rows exceed capacity {capacity}"
            )

    def __repr__(self) -> str:
        return f"Table({self.name!r}, rows={self.row_count}, capacity={self.capacity})"

    @property
    def row_count(self) -> int:
        return len(self._records)

    @property
    def records(self) -> tuple[Record, ...]:
        with self._lock:
            return tuple(self._records)

    @property
    def key_attribute(self) -> AttributeSchema:
        return self.schema[self.key_index]

    def attribute_index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise UnknownAttributeError(f"unknown attribute {name} in table {self.name}") from None

    def column(self, attribute: str) -> tuple[int, ...]:
        """Consistent snapshot of one attribute across all rows."""
        j = self.attribute_index(attribute)
        with self._lock:
            return tuple(r.values[j] for r in self._records)

    def make_record(self, values: Sequence[int]) -> Record:
        values = tuple(values)
        if len(values) != len(self.schema):
            raise SchemaError(
                f"table {self.name}: expected {len(self.schema)} values, got {len(values)}"
            )
        for attr, v in zip(self.schema, values):
            if isinstance(v, bool) or not isinstance(v, int):
                raise SchemaError(f"attribute {attr.name}: {v!r} is not an integer")
            if not attr.contains(v):
                raise RangeError(
                    f"attribute {attr.name}: {v} outside [{attr.min_value}, {attr.max_value}]"
                )
        key = values[self.key_index]
        label = _KEY_TO_SPECIES.get(key)
        return Record(values, label)

    def discretize(self, measurements: Sequence[Any], clamp: bool = True) -> tuple[int, ...]:
        if len(measurements) != len(self.schema):
            raise SchemaError(
                f"table {self.name}: expected {len(self.schema)} values, got {len(measurements)}"
            )
        out = []
        for attr, m in zip(self.schema, measurements):
            v = round_half_up(m)
            if clamp:
                v = attr.clamp(v)
            elif not attr.contains(v):
                raise RangeError(
                    f"attribute {attr.name}: {v} outside [{attr.min_value}, {attr.max_value}]"
                )
            out.append(v)
        return tuple(out)

    def write(self, record: Record) -> int:
        """Append, or overwrite the oldest row once capacity is reached."""
        with self._lock:
            if self.capacity is None or len(self._records) < self.capacity:
                self._records.append(record)
                return len(self._records) - 1
            index = self._cursor
            self._records[index] = record
            self._cursor = (index + 1) % self.capacity
            return index


def get_record(table: Table, index: int) -> Record:
    records = table.records
    if isinstance(index, bool) or not isinstance(index, int) or not 0 <= index < len(records):
        raise BoundsError(f"row {index} out of range for table {table.name} ({len(records)} rows)")
    return records[index]


def upsert_sensor_reading(table: Table, values: Sequence[Any], clamp: bool = True) -> int:
    """Store one sensor reading and return the row index written."""
    record = table.make_record(table.discretize(values, clamp=clamp))
    return table.write(record)


def _looks_numeric(cell: str) -> bool:
    try:
        Decimal(cell)
    except InvalidOperation:
        return False
    return True


def ingest_csv(
    raw: str,
    schema: Sequence[AttributeSchema],
    name: str = "data",
    capacity: int | None = None,
) -> Table:
    """Parse comma-separated measurement rows into a new table.

    Blank lines and ``#`` comments are skipped. A trailing species column is
    allowed; it must name a known iris species but does not affect values.
    """
    table = Table(name, schema, capacity=capacity)
    width = len(table.schema)
    lines = raw.splitlines()
    for lineno, row in enumerate(csv.reader(lines), start=1):
        text = lines[lineno - 1].strip()
        if not text or text.startswith("#"):
            continue
        cells = [c.strip() for c in row]
        if len(cells) == width + 1 and not _looks_numeric(cells[-1]):
            species = cells.pop()
            if species.lower() not in _CSV_SPECIES:
                raise CsvParseError(lineno, f"unknown species {species!r}")
        elif len(cells) != width:
            raise SchemaError(f"line {lineno}: expected {width} values, got {len(cells)}")
        try:
            values = table.discretize(cells, clamp=True)
        except ValueError as exc:
            if isinstance(exc, SchemaError):
                raise
            raise CsvParseError(lineno, str(exc)) from None
        table.write(table.make_record(values))
    return table


@dataclass
class Database:
    name: str
    report_mode: ReportMode
    tables: dict[str, Table] = field(default_factory=dict)


@dataclass
class Catalog:
    databases: dict[str, Database] = field(default_factory=dict)

    def database(self, name: str) -> Database:
        try:
            return self.databases[name]
        except KeyError:
            raise UnknownNameError(f"unknown database {name}") from None

    def table(self, database: str, table: str) -> Table:
        db = self.database(database)
        try:
            return db.tables[table]
        except KeyError:
            raise UnknownNameError(f"unknown table {table} in database {database}") from None

    def report_mode(self, database: str) -> ReportMode:
        return self.database(database).report_mode


def _iris_sample_text() -> str:
    return resources.files("smsqldb").joinpath("data/iris16.csv").read_text(encoding="utf-8")


def default_schema() -> list[AttributeSchema]:
    return [
        AttributeSchema("sepl", DEFAULT_MIN_VALUE, DEFAULT_MAX_VALUE, is_key=True),
        AttributeSchema("sepw", 0, DEFAULT_MAX_VALUE),
        AttributeSchema("petl", 0, DEFAULT_MAX_VALUE),
        AttributeSchema("petw", 0, DEFAULT_MAX_VALUE),
    ]


def default_rows() -> list[list[int]]:
    """Sixteen demo rows: stored key values plus the first iris measurements."""
    sample = ingest_csv(_iris_sample_text(), default_schema())
    rows = []
    for key, rec in zip(APPENDIX_KEY_VALUES, sample.records):
        values = list(rec.values)
        values[0] = key
        rows.append(values)
    return rows


def _schema_doc(schema: Sequence[AttributeSchema]) -> list[dict[str, Any]]:
    return [
        {"name": a.name, "min_value": a.min_value, "max_value": a.max_value, "is_key": a.is_key}
        for a in schema
    ]


def default_config() -> dict[str, Any]:
    """Two iris databases with identical content: ``iris`` verbose, ``uris`` terse."""
    rows = default_rows()
    table = {
        "name": "iris",
        "capacity": DEFAULT_CAPACITY,
        "attributes": _schema_doc(default_schema()),
        "rows": rows,
    }
    return {
        "databases": [
            {"name": "iris", "report_mode": "verbose", "tables": [dict(table)]},
            {"name": "uris", "report_mode": "terse", "tables": [dict(table)]},
        ]
    }


def default_catalog() -> Catalog:
    return load_catalog(default_config())


def _require(doc: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in doc:
        raise ConfigError(f"{where}: missing key {key!r}")
    return doc[key]


def _as_list(value: Any, where: str) -> list[Any]:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{where}: expected a non-empty list")
    return value


def _load_table(doc: Any, where: str, base_dir: Path | None) -> Table:
    if not isinstance(doc, Mapping):
        raise ConfigError(f"{where}: expected an object")
    name = _require(doc, "name", where)
    where = f"{where} {name!r}"
    attrs = []
    for i, a in enumerate(_as_list(_require(doc, "attributes", where), f"{where} attributes")):
        if not isinstance(a, Mapping):
            raise ConfigError(f"{where} attribute #{i}: expected an object")
        unknown = set(a) - {"name", "min_value", "max_value", "is_key"}
        if unknown:
            raise ConfigError(f"{where} attribute #{i}: unknown keys {sorted(unknown)}")
        try:
            attrs.append(
                AttributeSchema(
                    name=_require(a, "name", f"{where} attribute #{i}"),
                    min_value=a.get("min_value", DEFAULT_MIN_VALUE),
                    max_value=a.get("max_value", DEFAULT_MAX_VALUE),
                    is_key=bool(a.get("is_key", False)),
                )
            )
        except SchemaError as exc:
            raise ConfigError(f"{where}: {exc}") from None
    capacity = doc.get("capacity")
    sources = [k for k in ("rows", "csv", "csv_text") if k in doc]
    if len(sources) > 1:
        raise ConfigError(f"{where}: give at most one of rows/csv/csv_text")
    try:
        if "csv" in doc or "csv_text" in doc:
            if "csv" in doc:
                path = Path(doc["csv"])
                if base_dir is not None and not path.is_absolute():
                    path = base_dir / path
                raw = path.read_text(encoding="utf-8")
            else:
                raw = doc["csv_text"]
            return ingest_csv(raw, attrs, name=name, capacity=capacity)
        rows = doc.get("rows", [])
        if not isinstance(rows, list):
            raise ConfigError(f"{where}: rows must be a list")
        return Table(name, attrs, rows, capacity=capacity)
    except ConfigError:
        raise
    except (SchemaError, RangeError, CsvParseError, OSError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_catalog(config: Mapping[str, Any], base_dir: str | Path | None = None) -> Catalog:
    """Build a catalog from a parsed configuration document.

    Shape::

        {"databases": [{"name": ..., "report_mode": "verbose"|"terse",
                        "tables": [{"name": ..., "capacity": 16,
                                    "attributes": [{"name", "min_value",
                                                    "max_value", "is_key"}],
                                    "rows" | "csv" | "csv_text": ...}]}]}
    """
    if not isinstance(config, Mapping):
        raise ConfigError("catalog config must be an object")
    dbs = _as_list(_require(config, "databases", "catalog"), "catalog databases")
    base = Path(base_dir) if base_dir is not None else None
    catalog = Catalog()
    for i, d in enumerate(dbs):
        if not isinstance(d, Mapping):
            raise ConfigError(f"database #{i}: expected an object")
        name = _require(d, "name", f"database #{i}")
        if not isinstance(name, str) or not TOKEN_RE.fullmatch(name):
            raise ConfigError(f"database #{i}: name must be lowercase alphanumeric: {name!r}")
        if name in catalog.databases:
            raise ConflictError(f"duplicate database name {name!r}")
        try:
            mode = ReportMode(d.get("report_mode", "verbose"))
        except ValueError:
            raise ConfigError(f"database {name!r}: bad report_mode {d.get('report_mode')!r}") from None
        db = Database(name, mode)
        for t in _as_list(_require(d, "tables", f"database {name!r}"), f"database {name!r} tables"):
            table = _load_table(t, f"database {name!r} table", base)
            if table.name in db.tables:
                raise ConflictError(f"duplicate table name {table.name!r} in database {name!r}")
            db.tables[table.name] = table
        catalog.databases[name] = db
    return catalog


def _reject_duplicate_keys(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for k, v in pairs:
        if k in out:
            raise ConflictError(f"duplicate key {k!r} in config document")
        out[k] = v
    return out


def parse_config_text(text: str) -> dict[str, Any]:
    try:
        return json.loads(text, object_pairs_hook=_reject_duplicate_keys)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None


def load_catalog_file(path: str | Path) -> Catalog:
    path = Path(path)
    doc = parse_config_text(path.read_text(encoding="utf-8"))
    if isinstance(doc, Mapping) and "catalog" in doc:
        doc = doc["catalog"]
    return load_catalog(doc, base_dir=path.parent)
