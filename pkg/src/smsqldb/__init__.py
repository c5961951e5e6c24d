"""SMS-SQL micro-database node with a genetic-algorithm nearest-value search."""

from .gasearch import GaConfig, SearchResult, Selection, oracle_search, run_search
from .microdb import (
    AttributeSchema,
    Catalog,
    Record,
    ReportMode,
    SpeciesLabel,
    Table,
    classify_species,
    default_catalog,
    get_record,
    ingest_csv,
    load_catalog,
    upsert_sensor_reading,
)
from .server import Node, StatusEvent, handle_query, run_event_loop
from .smsql import ParsedQuery, QueryReport, format_report, parse_sms, to_canonical_sql
from .transport import ClientRegistry, LoopbackTransport, SmsFrame, decode_frame, encode_frame

__version__ = "0.1.0"

__all__ = [
    "AttributeSchema",
    "Catalog",
    "ClientRegistry",
    "GaConfig",
    "LoopbackTransport",
    "Node",
    "ParsedQuery",
    "QueryReport",
    "Record",
    "ReportMode",
    "SearchResult",
    "Selection",
    "SmsFrame",
    "SpeciesLabel",
    "StatusEvent",
    "Table",
    "classify_species",
    "decode_frame",
    "default_catalog",
    "encode_frame",
    "format_report",
    "get_record",
    "handle_query",
    "ingest_csv",
    "load_catalog",
    "oracle_search",
    "parse_sms",
    "run_event_loop",
    "run_search",
    "to_canonical_sql",
    "upsert_sensor_reading",
]
