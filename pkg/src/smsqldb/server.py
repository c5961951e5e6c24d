"""The database node: poll the transport, answer queries, report status.

Each inbound SMS is parsed, bound against the catalog, searched with the
GA and answered. Reports go to the sender and to every registered
client; errors go to the sender only. Species indications that a
physical node would show on LEDs are emitted as :class:`StatusEvent`
objects, and per-query latency is written as ``STAT|...`` lines.
"""

from __future__ import annotations

import itertools
import logging
import threading
import time
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Mapping, TextIO

from .errors import ConfigError, SmsDbError, TransportStoppedError
from .gasearch import GaConfig, OutcomeKind, SearchResult, Selection, run_search
from .microdb import Catalog, SpeciesLabel, classify_species
from .smsql import (
    Found,
    NearestApproximate,
    NotFound,
    ParsedQuery,
    QueryReport,
    error_text,
    parse_sms,
)
from .transport import ClientRegistry, Direction, LoopbackTransport, SmsFrame

log = logging.getLogger(__name__)


class PowerState(str, Enum):
    ACTIVE = "active"
    POWERED_DOWN = "powered_down"


class PowerMonitor:
    """Idle-driven power automaton.

    Each empty poll bumps ``idle_polls``; reaching ``idle_threshold`` powers
    the node down. Any inbound frame resets the idle count and, if the node
    was powered down, wakes it and bumps ``wake_count``.
    """

    def __init__(self, idle_threshold: int = 10) -> None:
        if idle_threshold < 1:
            raise ValueError("idle_threshold must be >= 1")
        self.idle_threshold = idle_threshold
        self.state = PowerState.ACTIVE
        self.idle_polls = 0
        self.wake_count = 0

    def on_poll(self, got_frame: bool) -> PowerState:
        if got_frame:
            self.idle_polls = 0
            if self.state is PowerState.POWERED_DOWN:
                self.state = PowerState.ACTIVE
                self.wake_count += 1
        else:
            self.idle_polls += 1
            if self.idle_polls >= self.idle_threshold:
                self.state = PowerState.POWERED_DOWN
        return self.state


class EventKind(str, Enum):
    RED = "red"
    ORANGE = "orange"
    GREEN = "green"
    ERROR = "error"


SPECIES_COLOURS = {
    SpeciesLabel.IRIS_SETOSA: EventKind.RED,
    SpeciesLabel.IRIS_VERSICOLOR: EventKind.ORANGE,
    SpeciesLabel.IRIS_VIRGINICA: EventKind.GREEN,
}


@dataclass(frozen=True)
class StatusEvent:
    kind: EventKind
    species: SpeciesLabel | None
    query_id: str

    @classmethod
    def for_species(cls, species: SpeciesLabel, query_id: str) -> StatusEvent:
        return cls(SPECIES_COLOURS[species], species, query_id)


@dataclass
class HandledQuery:
    query_id: str
    request: SmsFrame
    report: QueryReport | None
    frames: list[SmsFrame]
    event: StatusEvent
    query: ParsedQuery | None = None
    result: SearchResult | None = None
    error: str | None = None

    @property
    def lines(self) -> list[str]:
        if self.report is not None:
            return list(self.report.rendered)
        return [self.error or ""]

    @property
    def outcome(self) -> str:
        if self.error is not None:
            return "ERROR"
        assert self.result is not None
        return self.result.kind.name


def _recipients(sender: str, registry: Iterable[str] | None) -> list[str]:
    out = [sender]
    for client in registry or ():
        if client != sender:
            out.append(client)
    return out


def _outbound(recipients: list[str], lines: Iterable[str], ts: int) -> list[SmsFrame]:
    lines = list(lines)
    return [SmsFrame(Direction.OUTBOUND, r, line, ts) for r in recipients for line in lines]


def handle_query(
    frame: SmsFrame,
    catalog: Catalog,
    cfg: GaConfig,
    registry: Iterable[str] | None = None,
    query_id: str = "q0",
) -> HandledQuery:
    """Answer one inbound SMS without touching any transport.

    The returned frames are stamped with the request time; the transport
    restamps them when they are actually sent.
    """
    if frame.direction is not Direction.INBOUND:
        raise ValueError("handle_query expects an inbound frame")
    try:
        q = parse_sms(frame.body)
        table = catalog.table(q.database, q.table)
        mode = catalog.report_mode(q.database)
        q = ParsedQuery(q.database, q.table, q.attribute, q.target, mode)
        result = run_search(cfg, table, q.attribute, q.target)
        if result.kind is OutcomeKind.NOT_FOUND:
            outcome: Any = NotFound()
            event = StatusEvent(EventKind.ERROR, None, query_id)
        else:
            assert result.row is not None and result.distance is not None
            record = table.records[result.row]
            species = classify_species(record.values[table.key_index])
            if result.distance <= cfg.fitness_threshold:
                outcome = Found(species)
            else:
                outcome = NearestApproximate(species, result.distance)
            event = StatusEvent.for_species(species, query_id)
        report = QueryReport.build(outcome, mode)
    except SmsDbError as exc:
        text = error_text(exc)
        return HandledQuery(
            query_id,
            frame,
            None,
            _outbound([frame.peer_id], [text], frame.timestamp),
            StatusEvent(EventKind.ERROR, None, query_id),
            error=text,
        )
    frames = _outbound(_recipients(frame.peer_id, registry), report.rendered, frame.timestamp)
    return HandledQuery(query_id, frame, report, frames, event, q, result)


@dataclass(frozen=True)
class QueryStat:
    query_id: str
    latency_ms: float
    generations: int
    outcome: str

    def line(self) -> str:
        return f"STAT|{self.query_id}|{self.latency_ms:.3f}|{self.generations}|{self.outcome}"


class StatsCollector:
    """Thread-safe sink for per-query latency records."""

    def __init__(self, stream: TextIO | None = None) -> None:
        self._lock = threading.Lock()
        self._stream = stream
        self.records: list[QueryStat] = []

    def add(self, stat: QueryStat) -> None:
        with self._lock:
            self.records.append(stat)
            if self._stream is not None:
                self._stream.write(stat.line() + "\n")
                self._stream.flush()

    def summary(self) -> dict[str, float]:
        with self._lock:
            lat = [s.latency_ms for s in self.records]
        if not lat:
            return {}
        lat.sort()
        return {
            "count": len(lat),
            "min_ms": lat[0],
            "max_ms": lat[-1],
            "mean_ms": sum(lat) / len(lat),
            "median_ms": lat[len(lat) // 2],
        }


@dataclass
class ServerConfig:
    concurrency: int = 2
    idle_threshold: int = 10
    poll_interval_ms: float = 100.0
    loopback: bool = True
    host: str = "127.0.0.1"
    port: int = 7070
    delay_ms: float = 0.0
    clients: list[str] = field(default_factory=list)
    ga: GaConfig = field(default_factory=GaConfig)

    def __post_init__(self) -> None:
        if self.concurrency < 1:
            raise ConfigError("concurrency must be >= 1")
        if self.poll_interval_ms < 0:
            raise ConfigError("poll_interval_ms must be >= 0")

    @classmethod
    def from_mapping(cls, doc: Mapping[str, Any]) -> ServerConfig:
        known = {
            "concurrency", "idle_threshold", "poll_interval_ms", "transport", "clients", "ga",
            "catalog",
        }
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown server config keys {sorted(unknown)}")
        transport = doc.get("transport", {})
        ga = dict(doc.get("ga", {}))
        try:
            if "selection" in ga:
                ga["selection"] = Selection(ga["selection"])
            return cls(
                concurrency=int(doc.get("concurrency", 2)),
                idle_threshold=int(doc.get("idle_threshold", 10)),
                poll_interval_ms=float(doc.get("poll_interval_ms", 100.0)),
                loopback=bool(transport.get("loopback", True)),
                host=str(transport.get("host", "127.0.0.1")),
                port=int(transport.get("port", 7070)),
                delay_ms=float(transport.get("delay_ms", 0.0)),
                clients=list(doc.get("clients", [])),
                ga=GaConfig(**ga),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad server config: {exc}") from None


class Node:
    """Event loop wiring transport, parser, search and report dispatch."""

    def __init__(
        self,
        catalog: Catalog,
        cfg: GaConfig,
        transport: LoopbackTransport,
        registry: ClientRegistry | None = None,
        *,
        concurrency: int = 2,
        idle_threshold: int = 10,
        poll_interval_ms: float = 100.0,
        stats: StatsCollector | None = None,
        on_event: Callable[[StatusEvent], None] | None = None,
    ) -> None:
        self.catalog = catalog
        self.cfg = cfg
        self.transport = transport
        self.registry = registry if registry is not None else ClientRegistry()
        self.concurrency = concurrency
        self.poll_interval = poll_interval_ms / 1000.0
        self.power = PowerMonitor(idle_threshold)
        self.stats = stats if stats is not None else StatsCollector()
        self.events: list[StatusEvent] = []
        self.handled: list[HandledQuery] = []
        self._on_event = on_event
        self._sink_lock = threading.Lock()
        self._ids = itertools.count(1)
        self._stop = threading.Event()
        self.exit_reason: str | None = None

    def stop(self) -> None:
        self._stop.set()

    def process(self, frame: SmsFrame, query_id: str | None = None) -> HandledQuery:
        """Handle one frame, send its replies and record stats and events."""
        query_id = query_id or f"q{next(self._ids)}"
        try:
            handled = handle_query(frame, self.catalog, self.cfg, self.registry, query_id)
        except Exception as exc:  # isolate anything unexpected to this query
            log.exception("query %s failed", query_id)
            text = error_text(SmsDbError(f"internal error: {type(exc).__name__}"))
            handled = HandledQuery(
                query_id, frame, None,
                _outbound([frame.peer_id], [text], frame.timestamp),
                StatusEvent(EventKind.ERROR, None, query_id),
                error=text,
            )
        for out in handled.frames:
            self.transport.send_sms(out.peer_id, out.body)
        latency = self.transport.now_ms() - frame.timestamp
        gens = handled.result.generations_used if handled.result is not None else 0
        self.stats.add(QueryStat(query_id, latency, gens, handled.outcome))
        with self._sink_lock:
            self.events.append(handled.event)
            self.handled.append(handled)
        log.info("%s %s -> %s", query_id, handled.event.kind.value, "/".join(handled.lines))
        if self._on_event is not None:
            self._on_event(handled.event)
        return handled

    def serve(self) -> None:
        """Poll until :meth:`stop`; in-flight queries are drained before returning."""
        pending: set[Future] = set()
        with ThreadPoolExecutor(max_workers=self.concurrency, thread_name_prefix="query") as pool:
            try:
                while not self._stop.is_set():
                    pending = {f for f in pending if not f.done()}
                    if len(pending) >= self.concurrency:
                        wait(pending, timeout=self.poll_interval or None, return_when=FIRST_COMPLETED)
                        continue
                    frame = self.transport.poll_inbox()
                    self.power.on_poll(frame is not None)
                    if frame is None:
                        self._stop.wait(self.poll_interval)
                        continue
                    pending.add(pool.submit(self.process, frame, f"q{next(self._ids)}"))
                self.exit_reason = "shutdown"
            except TransportStoppedError as exc:
                self.exit_reason = f"transport error: {exc}"
                log.error("event loop terminated: %s", exc)
            wait(pending)


def run_event_loop(
    catalog: Catalog,
    cfg: GaConfig,
    transport: LoopbackTransport,
    registry: ClientRegistry | None = None,
    stop_event: threading.Event | None = None,
    **node_kwargs: Any,
) -> Node:
    """Run a :class:`Node` until ``stop_event`` is set; returns the node for inspection."""
    node = Node(catalog, cfg, transport, registry, **node_kwargs)
    if stop_event is not None:
        node._stop = stop_event
    node.serve()
    return node


def measure_latency(node: Node) -> dict[str, float]:
    return node.stats.summary()


def wait_until(predicate: Callable[[], bool], timeout: float = 5.0, step: float = 0.002) -> bool:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(step)
    return predicate()
