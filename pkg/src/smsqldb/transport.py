"""Simulated SMS transport: bounded frames, FIFO queues, a line protocol.

Wire format, one frame per line::

    MSG|<I|O>|<peer_id>|<ts_ms>|<body>

with ``\\`` and ``|`` in the body escaped as ``\\\\`` and ``\\|``.

:class:`LoopbackTransport` keeps both queues in process and is what the
tests and the one-shot CLI use. :class:`SocketTransport` adds a TCP
listener: every line a gateway client writes is an inbound frame, and
every outbound frame is written to all connected gateway clients.
"""

from __future__ import annotations

import collections
import logging
import re
import socket
import socketserver
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Iterator

from .errors import (
    BroadcastError,
    FrameFormatError,
    MessageLengthError,
    TransportStoppedError,
)

log = logging.getLogger(__name__)

SMS_MAX_CHARS = 160
PEER_ID_RE = re.compile(r"[0-9+]{1,20}", re.ASCII)
_TS_RE = re.compile(r"[0-9]+", re.ASCII)


class Direction(str, Enum):
    INBOUND = "I"
    OUTBOUND = "O"


@dataclass(frozen=True)
class SmsFrame:
    direction: Direction
    peer_id: str
    body: str
    timestamp: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "direction", Direction(self.direction))
        if not isinstance(self.peer_id, str) or not PEER_ID_RE.fullmatch(self.peer_id):
            raise FrameFormatError(f"bad peer id {self.peer_id!r}")
        if not isinstance(self.body, str):
            raise FrameFormatError("body must be text")
        if len(self.body) > SMS_MAX_CHARS:
            raise MessageLengthError(f"body has {len(self.body)} chars, limit is {SMS_MAX_CHARS}")
        if isinstance(self.timestamp, bool) or not isinstance(self.timestamp, int) or self.timestamp < 0:
            raise FrameFormatError(f"bad timestamp {self.timestamp!r}")


def encode_frame(f: SmsFrame) -> str:
    if "\n" in f.body or "\r" in f.body:
        raise FrameFormatError("body may not contain line breaks")
    body = f.body.replace("\\", "\\\\").replace("|", "\\|")
    return f"MSG|{f.direction.value}|{f.peer_id}|{f.timestamp}|{body}"


def _unescape(body: str) -> str:
    out = []
    chars = iter(body)
    for c in chars:
        if c == "\\":
            nxt = next(chars, None)
            if nxt not in ("\\", "|"):
                raise FrameFormatError(f"bad escape sequence \\{nxt or ''}")
            out.append(nxt)
        elif c == "|":
            raise FrameFormatError("unescaped '|' in body")
        else:
            out.append(c)
    return "".join(out)


def decode_frame(line: str) -> SmsFrame:
    line = line.rstrip("\r\n") if line.endswith("\n") else line
    if "\n" in line or "\r" in line:
        raise FrameFormatError("frame spans more than one line")
    parts = line.split("|", 4)
    if len(parts) != 5 or parts[0] != "MSG":
        raise FrameFormatError(f"not a frame: {line[:40]!r}")
    _, direction, peer_id, ts, body = parts
    if direction not in ("I", "O"):
        raise FrameFormatError(f"bad direction {direction!r}")
    if not _TS_RE.fullmatch(ts):
        raise FrameFormatError(f"bad timestamp {ts!r}")
    try:
        return SmsFrame(Direction(direction), peer_id, _unescape(body), int(ts))
    except MessageLengthError as exc:
        raise FrameFormatError(str(exc)) from None


class ClientRegistry:
    """Ordered set of peer ids that receive every query report."""

    def __init__(self, clients: Iterable[str] = ()) -> None:
        self._clients: dict[str, None] = {}
        for c in clients:
            self.register(c)

    def register(self, peer_id: str) -> bool:
        if not isinstance(peer_id, str) or not PEER_ID_RE.fullmatch(peer_id):
            raise FrameFormatError(f"bad peer id {peer_id!r}")
        if peer_id in self._clients:
            return False
        self._clients[peer_id] = None
        return True

    def __iter__(self) -> Iterator[str]:
        return iter(list(self._clients))

    def __len__(self) -> int:
        return len(self._clients)

    def __contains__(self, peer_id: object) -> bool:
        return peer_id in self._clients


class LoopbackTransport:
    """In-process transport with an inbox and an outbox.

    ``delay_ms`` holds each injected frame back from :meth:`poll_inbox`
    for that long, standing in for network transit.
    """

    def __init__(self, delay_ms: float = 0, clock: Callable[[], float] = time.monotonic) -> None:
        self.delay_ms = delay_ms
        self._clock = clock
        self._lock = threading.Lock()
        self._inbox: collections.deque[tuple[float, SmsFrame]] = collections.deque()
        self._outbox: collections.deque[SmsFrame] = collections.deque()
        self._outbox_ready = threading.Condition(self._lock)
        self._t0: float | None = None
        self._running = False
        self._last_ts = {Direction.INBOUND: 0, Direction.OUTBOUND: 0}
        self.listeners: list[Callable[[SmsFrame], None]] = []

    @property
    def running(self) -> bool:
        return self._running

    def start(self) -> LoopbackTransport:
        with self._lock:
            if self._t0 is None:
                self._t0 = self._clock()
            self._running = True
        return self

    def stop(self) -> None:
        with self._lock:
            self._running = False
            self._outbox_ready.notify_all()

    def __enter__(self) -> LoopbackTransport:
        return self.start()

    def __exit__(self, *exc: object) -> None:
        self.stop()

    def now_ms(self) -> float:
        """Milliseconds since start, with sub-millisecond resolution."""
        if self._t0 is None:
            raise TransportStoppedError("transport not started")
        return (self._clock() - self._t0) * 1000.0

    def _stamp(self, direction: Direction) -> int:
        # caller holds the lock
        ts = max(int(self.now_ms()), self._last_ts[direction])
        self._last_ts[direction] = ts
        return ts

    def _check_running(self) -> None:
        if not self._running:
            raise TransportStoppedError("transport is stopped")

    def inject(self, peer_id: str, body: str) -> SmsFrame:
        """Deliver an SMS from a simulated peer towards the node."""
        with self._lock:
            self._check_running()
            frame = SmsFrame(Direction.INBOUND, peer_id, body, self._stamp(Direction.INBOUND))
            self._inbox.append((self.now_ms() + self.delay_ms, frame))
        return frame

    def inject_frame(self, frame: SmsFrame) -> SmsFrame:
        if frame.direction is not Direction.INBOUND:
            raise FrameFormatError("only inbound frames can be injected")
        return self.inject(frame.peer_id, frame.body)

    def poll_inbox(self) -> SmsFrame | None:
        with self._lock:
            self._check_running()
            if self._inbox and self._inbox[0][0] <= self.now_ms():
                return self._inbox.popleft()[1]
            return None

    def pending_inbound(self) -> int:
        with self._lock:
            return len(self._inbox)

    def send_sms(self, recipient: str, body: str) -> SmsFrame:
        with self._lock:
            self._check_running()
            frame = SmsFrame(Direction.OUTBOUND, recipient, body, self._stamp(Direction.OUTBOUND))
            self._outbox.append(frame)
            self._outbox_ready.notify_all()
        for listener in list(self.listeners):
            listener(frame)
        return frame

    def broadcast(self, registry: Iterable[str], lines: Iterable[str]) -> int:
        """Send every line to every client, client by client; return frames sent."""
        lines = list(lines)
        sent = 0
        for client in registry:
            for line in lines:
                try:
                    self.send_sms(client, line)
                except Exception as exc:
                    raise BroadcastError(sent, exc) from exc
                sent += 1
        return sent

    def drain_outbox(self) -> list[SmsFrame]:
        with self._lock:
            frames = list(self._outbox)
            self._outbox.clear()
            return frames

    def wait_outbox(self, count: int, timeout: float = 5.0) -> list[SmsFrame]:
        """Block until at least ``count`` frames are waiting, then drain them."""
        deadline = time.monotonic() + timeout
        with self._lock:
            while len(self._outbox) < count:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                self._outbox_ready.wait(remaining)
            frames = list(self._outbox)
            self._outbox.clear()
            return frames


class _GatewayHandler(socketserver.StreamRequestHandler):
    server: _GatewayServer

    def handle(self) -> None:
        transport = self.server.transport
        transport._attach(self.wfile)
        try:
            for raw in self.rfile:
                line = raw.decode("utf-8", errors="replace").rstrip("\r\n")
                if not line:
                    continue
                try:
                    frame = decode_frame(line)
                    if frame.direction is not Direction.INBOUND:
                        raise FrameFormatError("gateway may only submit inbound frames")
                    transport.inject_frame(frame)
                except (FrameFormatError, MessageLengthError) as exc:
                    transport._write(self.wfile, f"ERR|{exc}")
                except TransportStoppedError:
                    break
        finally:
            transport._detach(self.wfile)


class _GatewayServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], transport: SocketTransport) -> None:
        self.transport = transport
        super().__init__(address, _GatewayHandler)


class SocketTransport(LoopbackTransport):
    """Loopback queues fronted by a TCP line-protocol listener."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0, delay_ms: float = 0) -> None:
        super().__init__(delay_ms=delay_ms)
        self._address = (host, port)
        self._server: _GatewayServer | None = None
        self._thread: threading.Thread | None = None
        self._peers: list = []
        self._peers_lock = threading.Lock()
        self.listeners.append(self._fan_out)

    @property
    def address(self) -> tuple[str, int]:
        if self._server is None:
            return self._address
        return self._server.server_address[:2]

    def start(self) -> SocketTransport:
        super().start()
        if self._server is None:
            self._server = _GatewayServer(self._address, self)
            self._thread = threading.Thread(
                target=self._server.serve_forever, name="sms-gateway", daemon=True
            )
            self._thread.start()
            log.info("gateway listening on %s:%d", *self.address)
        return self

    def stop(self) -> None:
        super().stop()
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None
        with self._peers_lock:
            for wfile in self._peers:
                try:
                    wfile.close()
                except OSError:
                    pass
            self._peers.clear()

    def _attach(self, wfile) -> None:
        with self._peers_lock:
            self._peers.append(wfile)

    def _detach(self, wfile) -> None:
        with self._peers_lock:
            if wfile in self._peers:
                self._peers.remove(wfile)

    def _write(self, wfile, line: str) -> None:
        try:
            wfile.write(line.encode("utf-8") + b"\n")
            wfile.flush()
        except (OSError, ValueError):
            self._detach(wfile)

    def _fan_out(self, frame: SmsFrame) -> None:
        line = encode_frame(frame)
        with self._peers_lock:
            peers = list(self._peers)
        for wfile in peers:
            self._write(wfile, line)


def connect_gateway(address: tuple[str, int], timeout: float = 5.0) -> socket.socket:
    """Open a client connection to a :class:`SocketTransport` listener."""
    return socket.create_connection(address, timeout=timeout)
