"""Usage-event collection into an append-only, line-oriented feedback log.

Each log line is one JSON object::

    {"category": "Commenting", "action": "DoubleClickEnactment", "variant": "V1",
     "ts": null, "client": null, "recv_ts": "2026-10-14T09:00:00.123Z"}

Events reach the log through :class:`FeedbackLog.append` (in process), the
HTTP endpoint ``POST /collect`` (see :func:`serve`) or :func:`import_events`.
An optional ``id`` field makes delivery idempotent so that producers can
safely retry after an interrupted request.
"""

from __future__ import annotations

import http.client
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Iterable

from .errors import EventRejected, FeatrackError, StorageError

log = logging.getLogger(__name__)

WIRE_FIELDS = ("category", "action", "variant", "ts", "client", "id")


@dataclass(frozen=True)
class FeedbackEvent:
    category: str
    action: str
    variant: str
    ts: str | None = None
    client: str | None = None
    recv_ts: str | None = None
    id: str | None = None

    def to_wire(self) -> dict:
        out = {"category": self.category, "action": self.action, "variant": self.variant}
        for key in ("ts", "client", "id"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out

    def to_log_line(self) -> str:
        data = {
            "category": self.category,
            "action": self.action,
            "variant": self.variant,
            "ts": self.ts,
            "client": self.client,
            "recv_ts": self.recv_ts,
        }
        if self.id is not None:
            data["id"] = self.id
        return json.dumps(data, ensure_ascii=False, separators=(",", ":")) + "\n"

    @property
    def recv_datetime(self) -> datetime | None:
        return parse_timestamp(self.recv_ts) if self.recv_ts else None


def parse_timestamp(text: str) -> datetime:
    """Parse ISO-8601 (``Z`` suffix allowed); naive values are taken as UTC."""
    value = text.strip()
    if value.endswith(("Z", "z")):
        value = value[:-1] + "+00:00"
    dt = datetime.fromisoformat(value)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_timestamp(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).isoformat(timespec="milliseconds").replace("+00:00", "Z")


def event_from_dict(data: object, *, allow_recv_ts: bool = False) -> FeedbackEvent:
    """Validate a wire (or log) mapping; raises :class:`EventRejected` with the reason."""
    if not isinstance(data, dict):
        raise EventRejected("event must be a JSON object")
    allowed = set(WIRE_FIELDS) | ({"recv_ts"} if allow_recv_ts else set())
    unknown = set(data) - allowed
    if unknown:
        raise EventRejected(f"unknown fields {sorted(unknown)}")
    values = {}
    for key in ("category", "action", "variant"):
        value = data.get(key)
        if not isinstance(value, str) or not value.strip():
            raise EventRejected(f"field {key!r} must be a non-empty string")
        values[key] = value
    for key in ("ts", "client", "id") + (("recv_ts",) if allow_recv_ts else ()):
        value = data.get(key)
        if value is not None and not isinstance(value, str):
            raise EventRejected(f"field {key!r} must be a string")
        values[key] = value
    for key in ("ts", "recv_ts"):
        if values.get(key):
            try:
                parse_timestamp(values[key])
            except ValueError:
                raise EventRejected(f"field {key!r} is not an ISO-8601 timestamp: {values[key]!r}") from None
    return FeedbackEvent(**values)


def _repair_tail(path: Path) -> int:
    """Truncate a trailing partial line left by a crash; returns bytes dropped."""
    if not path.exists():
        return 0
    size = path.stat().st_size
    if size == 0:
        return 0
    with open(path, "rb+") as fh:
        fh.seek(-1, os.SEEK_END)
        if fh.read(1) == b"\n":
            return 0
        # scan backwards for the last newline
        pos = size
        chunk = 4096
        keep = 0
        while pos > 0:
            start = max(0, pos - chunk)
            fh.seek(start)
            data = fh.read(pos - start)
            idx = data.rfind(b"\n")
            if idx >= 0:
                keep = start + idx + 1
                break
            pos = start
        fh.truncate(keep)
        os.fsync(fh.fileno())
    return size - keep


@dataclass
class LogScan:
    events: list[FeedbackEvent]
    corrupt_lines: list[int]
    partial_tail: bool


def scan_log(path: Path | str) -> LogScan:
    """Read every complete line; a final line without newline is reported, not parsed."""
    path = Path(path)
    events: list[FeedbackEvent] = []
    corrupt: list[int] = []
    partial = False
    if not path.exists():
        return LogScan(events, corrupt, partial)
    with open(path, "rb") as fh:
        data = fh.read()
    lines = data.split(b"\n")
    if lines and lines[-1]:
        partial = True
    for i, raw in enumerate(lines[:-1]):
        try:
            events.append(event_from_dict(json.loads(raw.decode("utf-8")), allow_recv_ts=True))
        except (ValueError, EventRejected):
            corrupt.append(i)
    return LogScan(events, corrupt, partial)


def read_log(path: Path | str) -> list[FeedbackEvent]:
    scan = scan_log(path)
    if scan.corrupt_lines:
        log.warning("%s: skipped %d corrupt lines", path, len(scan.corrupt_lines))
    return scan.events


class FeedbackLog:
    """Single-writer append-only log; safe to share between threads.

    With ``batch_size=1`` every append is flushed and fsynced before it returns.
    """

    def __init__(
        self,
        path: Path | str,
        batch_size: int = 1,
        fsync: bool = True,
        known_metrics: Iterable[str] | None = None,
    ) -> None:
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.path = Path(path)
        self.batch_size = batch_size
        self.fsync = fsync
        self.known_metrics = None if known_metrics is None else frozenset(known_metrics)
        self._lock = threading.Lock()
        self._pending = 0
        self._last_ms = 0
        self.path.parent.mkdir(parents=True, exist_ok=True)
        dropped = _repair_tail(self.path)
        if dropped:
            log.warning("%s: dropped %d bytes of a torn final line", self.path, dropped)
        self._ids = {e.id for e in scan_log(self.path).events if e.id is not None}
        self._fh = open(self.path, "ab")

    def _receipt_timestamp(self) -> str:
        now_ms = time.time_ns() // 1_000_000
        self._last_ms = max(now_ms, self._last_ms)
        return format_timestamp(datetime.fromtimestamp(self._last_ms / 1000, tz=timezone.utc))

    def append(self, event: FeedbackEvent | dict) -> FeedbackEvent:
        """Persist one event and return it with its receipt timestamp."""
        if isinstance(event, dict):
            event = event_from_dict(event)
        if self.known_metrics is not None and event.action not in self.known_metrics:
            raise EventRejected(f"action {event.action!r} is not a metric of the feedback model")
        with self._lock:
            if self._fh.closed:
                raise StorageError("log is closed")
            if event.id is not None and event.id in self._ids:
                return event
            stored = FeedbackEvent(
                event.category, event.action, event.variant, event.ts, event.client, self._receipt_timestamp(), event.id
            )
            try:
                self._fh.write(stored.to_log_line().encode("utf-8"))
                self._pending += 1
                if self._pending >= self.batch_size:
                    self._flush()
            except OSError as exc:
                raise StorageError(f"cannot append to {self.path}: {exc}") from exc
            if event.id is not None:
                self._ids.add(event.id)
            return stored

    def _flush(self) -> None:
        self._fh.flush()
        if self.fsync:
            os.fsync(self._fh.fileno())
        self._pending = 0

    def flush(self) -> None:
        with self._lock:
            if not self._fh.closed:
                self._flush()

    def close(self) -> None:
        with self._lock:
            if not self._fh.closed:
                self._flush()
                self._fh.close()

    def __enter__(self) -> "FeedbackLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def ingest(log_: FeedbackLog, event: FeedbackEvent | dict) -> FeedbackEvent:
    return log_.append(event)


def import_events(log_: FeedbackLog, events_path: Path | str) -> tuple[int, list[str]]:
    """Append a JSON-lines file of wire events (all or nothing).

    Returns ``(appended, problems)``; nothing is appended when any line is bad.
    """
    events: list[FeedbackEvent] = []
    problems: list[str] = []
    with open(events_path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                event = event_from_dict(json.loads(line))
                if log_.known_metrics is not None and event.action not in log_.known_metrics:
                    raise EventRejected(f"action {event.action!r} is not a metric of the feedback model")
                events.append(event)
            except ValueError as exc:
                problems.append(f"{events_path}:{n}: invalid JSON: {exc}")
            except EventRejected as exc:
                problems.append(f"{events_path}:{n}: {exc}")
    if problems:
        return 0, problems
    for event in events:
        log_.append(event)
    log_.flush()
    return len(events), []


# -- HTTP endpoint -------------------------------------------------------------


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server: "CollectorServer"

    def log_message(self, fmt: str, *args) -> None:
        log.debug("%s " + fmt, self.address_string(), *args)

    def _reply(self, status: int, text: str = "") -> None:
        body = text.encode("utf-8")
        self.send_response(status)
        if status != 204:
            self.send_header("Content-Type", "text/plain; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        if body and status != 204:
            self.wfile.write(body)

    def do_GET(self) -> None:
        if self.path == "/health":
            self._reply(200, "ok\n")
        else:
            self._reply(404, "not found\n")

    def do_POST(self) -> None:
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        if self.path != "/collect":
            self._reply(404, "not found\n")
            return
        try:
            event = event_from_dict(json.loads(body.decode("utf-8")))
            self.server.feedback_log.append(event)
        except (ValueError, EventRejected) as exc:
            self._reply(400, f"{exc}\n")
            return
        except StorageError as exc:
            self._reply(503, f"{exc}\n")
            return
        self._reply(204)


class CollectorServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], feedback_log: FeedbackLog) -> None:
        self.feedback_log = feedback_log
        super().__init__(address, _Handler)

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "CollectorServer":
        thread = threading.Thread(target=self.serve_forever, name="featrack-collector", daemon=True)
        thread.start()
        self._thread = thread
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        self.feedback_log.close()


def parse_address(addr: str) -> tuple[str, int]:
    addr = addr.removeprefix("http://").rstrip("/")
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise FeatrackError(f"address must be HOST:PORT, got {addr!r}")
    return host or "127.0.0.1", int(port)


def serve(
    addr: str | tuple[str, int],
    log_path: Path | str,
    known_metrics: Iterable[str] | None = None,
    batch_size: int = 1,
) -> CollectorServer:
    """Bind the collector; call ``serve_forever()`` or ``start()`` on the result."""
    address = parse_address(addr) if isinstance(addr, str) else addr
    feedback_log = FeedbackLog(log_path, batch_size=batch_size, known_metrics=known_metrics)
    try:
        return CollectorServer(address, feedback_log)
    except OSError as exc:
        feedback_log.close()
        raise FeatrackError(f"cannot listen on {address[0]}:{address[1]}: {exc.strerror}") from exc


class HttpSink:
    """Posts events to a collector over one keep-alive connection, retrying on failure."""

    def __init__(self, addr: str, retries: int = 50, backoff: float = 0.05, timeout: float = 10.0) -> None:
        self.host, self.port = parse_address(addr)
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self._conn: http.client.HTTPConnection | None = None

    def _connection(self) -> http.client.HTTPConnection:
        if self._conn is None:
            self._conn = http.client.HTTPConnection(self.host, self.port, timeout=self.timeout)
        return self._conn

    def send(self, event: FeedbackEvent) -> None:
        body = json.dumps(event.to_wire()).encode("utf-8")
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                conn = self._connection()
                conn.request("POST", "/collect", body=body, headers={"Content-Type": "application/json"})
                resp = conn.getresponse()
                text = resp.read().decode("utf-8", "replace")
                if resp.status == 204:
                    return
                if resp.status == 400:
                    raise EventRejected(text.strip())
                last = StorageError(f"collector answered {resp.status}: {text.strip()}")
            except (OSError, http.client.HTTPException) as exc:
                last = exc
                self.close()
            time.sleep(self.backoff * min(attempt + 1, 10))
        raise StorageError(f"could not deliver event after {self.retries + 1} attempts: {last}")

    def close(self) -> None:
        if self._conn is not None:
            self._conn.close()
            self._conn = None


class LogSink:
    """Direct in-process delivery into a :class:`FeedbackLog`."""

    def __init__(self, feedback_log: FeedbackLog) -> None:
        self.feedback_log = feedback_log

    def send(self, event: FeedbackEvent) -> None:
        self.feedback_log.append(event)

    def close(self) -> None:
        pass
