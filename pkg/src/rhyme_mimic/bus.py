"""Topic-based publish/subscribe bus with in-process and TCP transports.

Semantics are deliberately small: per-publisher-per-topic FIFO, at-most-once
delivery, no persistence, no global order.  Inboxes are bounded; when one
overflows, stale pose frames are dropped first and control traffic is never
dropped.  Remote nodes speak newline-delimited JSON envelopes
{topic, seq, timestamp_ms, node_id, payload} over TCP; the websocket bridge
reuses the same envelope, one per text message.
"""
from __future__ import annotations

import json
import logging
import socket
import threading
from collections import deque
from dataclasses import dataclass
from typing import Callable

logger = logging.getLogger(__name__)

# Canonical topics. Unknown topics are deliverable but counted in diagnostics.
TOPIC_POSE_FRAMES = "pose/frames"
TOPIC_POSE_CLASSIFIED = "pose/classified"
TOPIC_GAME_STATE = "game/state"
TOPIC_GAME_EVENTS = "game/events"
TOPIC_PERIPHERAL_DISPLAY = "peripheral/display"
TOPIC_PERIPHERAL_AUDIO = "peripheral/audio"
TOPIC_PERIPHERAL_TTS = "peripheral/tts"
TOPIC_PERIPHERAL_MOTION = "peripheral/motion"
TOPIC_PERIPHERAL_ACK = "peripheral/ack"
TOPIC_WOZ_COMMANDS = "woz/commands"
TOPIC_SYSTEM_DIAGNOSTICS = "system/diagnostics"

CANONICAL_TOPICS = frozenset(
    {
        TOPIC_POSE_FRAMES,
        TOPIC_POSE_CLASSIFIED,
        TOPIC_GAME_STATE,
        TOPIC_GAME_EVENTS,
        TOPIC_PERIPHERAL_DISPLAY,
        TOPIC_PERIPHERAL_AUDIO,
        TOPIC_PERIPHERAL_TTS,
        TOPIC_PERIPHERAL_MOTION,
        TOPIC_PERIPHERAL_ACK,
        TOPIC_WOZ_COMMANDS,
        TOPIC_SYSTEM_DIAGNOSTICS,
    }
)

# Never dropped on overflow: losing one loses game or operator intent.
CONTROL_TOPICS = frozenset({TOPIC_GAME_EVENTS, TOPIC_WOZ_COMMANDS})

DEFAULT_INBOX_LIMIT = 1024

# Reserved topics for transport control envelopes.
CONTROL_HELLO = "_bus/hello"
CONTROL_WELCOME = "_bus/welcome"
CONTROL_SUBSCRIBE = "_bus/subscribe"
CONTROL_UNSUBSCRIBE = "_bus/unsubscribe"


class BusClosed(Exception):
    pass


class ProtocolError(Exception):
    """Malformed envelope on a transport connection."""


@dataclass(frozen=True)
class BusMessage:
    topic: str
    seq: int
    timestamp_ms: int
    node_id: str
    payload: dict

    def to_envelope(self) -> dict:
        return {
            "topic": self.topic,
            "seq": self.seq,
            "timestamp_ms": self.timestamp_ms,
            "node_id": self.node_id,
            "payload": self.payload,
        }


def envelope_to_message(doc: dict) -> BusMessage:
    if not isinstance(doc, dict):
        raise ProtocolError(f"envelope must be an object, got {type(doc).__name__}")
    try:
        topic = doc["topic"]
        payload = doc.get("payload", {})
        if not isinstance(topic, str) or not topic:
            raise ProtocolError(f"bad topic: {topic!r}")
        if not isinstance(payload, dict):
            raise ProtocolError("payload must be an object")
        return BusMessage(
            topic=topic,
            seq=int(doc.get("seq", 0)),
            timestamp_ms=int(doc.get("timestamp_ms", 0)),
            node_id=str(doc.get("node_id", "")),
            payload=payload,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed envelope: {exc}") from exc


class NodeHandle:
    """A registered node: subscriptions plus a bounded ordered inbox.

    One logical consumer per handle; the on_deliver hook lets the runtime
    schedule a drain on its event loop instead of polling.
    """

    def __init__(self, bus: "Bus", node_id: str, inbox_limit: int) -> None:
        self.bus = bus
        self.node_id = node_id
        self.subscriptions: set[str] = set()
        self._inbox: deque[BusMessage] = deque()
        self._limit = inbox_limit
        self._cond = threading.Condition()
        self.on_deliver: Callable[[], None] | None = None
        self.closed = False

    # -- consumer side -----------------------------------------------------

    def try_recv(self) -> BusMessage | None:
        with self._cond:
            return self._inbox.popleft() if self._inbox else None

    def recv(self, timeout: float | None = None) -> BusMessage | None:
        with self._cond:
            if not self._inbox:
                self._cond.wait(timeout)
            return self._inbox.popleft() if self._inbox else None

    def pending(self) -> int:
        with self._cond:
            return len(self._inbox)

    # -- producer side (called by the bus under its own lock) ---------------

    def _deliver(self, message: BusMessage) -> int:
        dropped = 0
        with self._cond:
            if len(self._inbox) >= self._limit:
                dropped = self._evict()
            self._inbox.append(message)
            self._cond.notify()
        if self.on_deliver is not None:
            self.on_deliver()
        return dropped

    def _evict(self) -> int:
        for i, msg in enumerate(self._inbox):
            if msg.topic == TOPIC_POSE_FRAMES:
                del self._inbox[i]
                return 1
        for i, msg in enumerate(self._inbox):
            if msg.topic not in CONTROL_TOPICS:
                del self._inbox[i]
                return 1
        return 0  # all control traffic: exceed the bound rather than drop

    # -- convenience -------------------------------------------------------

    def publish(self, topic: str, payload: dict) -> int:
        return self.bus.publish(self, topic, payload)

    def subscribe(self, topic: str) -> None:
        self.bus.subscribe(self, topic)

    def unsubscribe(self, topic: str) -> None:
        self.bus.unsubscribe(self, topic)

    def close(self) -> None:
        self.bus.deregister(self)


class Bus:
    """In-process topic router; safe for concurrent publishers."""

    def __init__(self, clock, inbox_limit: int = DEFAULT_INBOX_LIMIT) -> None:
        self.clock = clock
        self._inbox_limit = inbox_limit
        self._lock = threading.Lock()
        self._handles: dict[str, NodeHandle] = {}
        self._subscribers: dict[str, list[NodeHandle]] = {}
        self._seq: dict[tuple[str, str], int] = {}
        self._closed = False
        self.diagnostics = {
            "unknown_topic_publishes": 0,
            "dropped_messages": 0,
            "remote_disconnects": 0,
        }

    def register(self, node_id: str) -> NodeHandle:
        with self._lock:
            self._check_open()
            unique = node_id
            n = 1
            while unique in self._handles:
                n += 1
                unique = f"{node_id}-{n}"
            handle = NodeHandle(self, unique, self._inbox_limit)
            self._handles[unique] = handle
            return handle

    def deregister(self, handle: NodeHandle) -> None:
        with self._lock:
            handle.closed = True
            self._handles.pop(handle.node_id, None)
            for topic in list(handle.subscriptions):
                subs = self._subscribers.get(topic)
                if subs and handle in subs:
                    subs.remove(handle)
            handle.subscriptions.clear()

    def subscribe(self, handle: NodeHandle, topic: str) -> None:
        self._check_topic(topic)
        with self._lock:
            self._check_open()
            if handle.closed:
                raise BusClosed(f"handle {handle.node_id} is closed")
            subs = self._subscribers.setdefault(topic, [])
            if handle not in subs:  # double subscribe is idempotent
                subs.append(handle)
            handle.subscriptions.add(topic)

    def unsubscribe(self, handle: NodeHandle, topic: str) -> None:
        with self._lock:
            self._check_open()
            subs = self._subscribers.get(topic)
            if subs and handle in subs:
                subs.remove(handle)
            handle.subscriptions.discard(topic)

    def publish(self, handle: NodeHandle, topic: str, payload: dict) -> int:
        self._check_topic(topic)
        with self._lock:
            self._check_open()
            if handle.closed:
                raise BusClosed(f"handle {handle.node_id} is closed")
            if topic not in CANONICAL_TOPICS:
                self.diagnostics["unknown_topic_publishes"] += 1
            key = (handle.node_id, topic)
            seq = self._seq.get(key, 0) + 1
            self._seq[key] = seq
            message = BusMessage(
                topic=topic,
                seq=seq,
                timestamp_ms=self.clock.now_ms(),
                node_id=handle.node_id,
                payload=payload,
            )
            for subscriber in self._subscribers.get(topic, ()):
                self.diagnostics["dropped_messages"] += subscriber._deliver(message)
            return seq

    def close(self) -> None:
        with self._lock:
            self._closed = True
            for handle in self._handles.values():
                handle.closed = True

    @property
    def closed(self) -> bool:
        return self._closed

    def _check_open(self) -> None:
        if self._closed:
            raise BusClosed("bus is closed")

    @staticmethod
    def _check_topic(topic: str) -> None:
        if not topic or not isinstance(topic, str):
            raise ValueError(f"topic must be a non-empty string, got {topic!r}")


# ---------------------------------------------------------------------------
# TCP transport


class TcpBusServer:
    """Accepts remote nodes and proxies them onto a local bus."""

    def __init__(self, bus: Bus, host: str = "127.0.0.1", port: int = 7001) -> None:
        self.bus = bus
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen()
        self.address = self._sock.getsockname()
        self._closing = False
        self._conns: list[socket.socket] = []
        self._diag = bus.register("bus-tcp-server")
        self._thread = threading.Thread(target=self._accept_loop, daemon=True, name="bus-tcp-accept")
        self._thread.start()

    def _accept_loop(self) -> None:
        while not self._closing:
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            self._conns.append(conn)
            threading.Thread(target=self._serve_conn, args=(conn,), daemon=True).start()

    def _serve_conn(self, conn: socket.socket) -> None:
        handle: NodeHandle | None = None
        writer_stop = threading.Event()
        try:
            reader = conn.makefile("r", encoding="utf-8", newline="\n")
            writer = conn.makefile("w", encoding="utf-8", newline="\n")
            for line in reader:
                line = line.strip()
                if not line:
                    continue
                try:
                    message = envelope_to_message(json.loads(line))
                except (json.JSONDecodeError, ProtocolError) as exc:
                    logger.warning("protocol error from %s: %s", conn.getpeername(), exc)
                    raise ProtocolError(str(exc)) from exc
                if message.topic == CONTROL_HELLO:
                    requested = str(message.payload.get("node_id", "remote"))
                    handle = self.bus.register(requested)
                    threading.Thread(
                        target=self._writer_loop, args=(handle, writer, writer_stop, conn), daemon=True
                    ).start()
                    writer.write(
                        json.dumps(
                            BusMessage(
                                CONTROL_WELCOME, 0, self.bus.clock.now_ms(), "bus", {"node_id": handle.node_id}
                            ).to_envelope()
                        )
                        + "\n"
                    )
                    writer.flush()
                elif handle is None:
                    raise ProtocolError("first envelope must be a hello")
                elif message.topic == CONTROL_SUBSCRIBE:
                    self.bus.subscribe(handle, str(message.payload["topic"]))
                elif message.topic == CONTROL_UNSUBSCRIBE:
                    self.bus.unsubscribe(handle, str(message.payload["topic"]))
                else:
                    self.bus.publish(handle, message.topic, message.payload)
        except (ProtocolError, OSError, ValueError, KeyError, BusClosed):
            pass
        finally:
            writer_stop.set()
            if handle is not None:
                node_id = handle.node_id
                handle.close()
                self.bus.diagnostics["remote_disconnects"] += 1
                if not self.bus.closed and not self._closing:
                    try:
                        self._diag.publish(
                            TOPIC_SYSTEM_DIAGNOSTICS,
                            {"event": "client_disconnected", "node_id": node_id},
                        )
                    except BusClosed:
                        pass
            _shutdown(conn)

    def _writer_loop(self, handle: NodeHandle, writer, stop: threading.Event, conn) -> None:
        try:
            while not stop.is_set():
                message = handle.recv(timeout=0.1)
                if message is None:
                    continue
                writer.write(json.dumps(message.to_envelope()) + "\n")
                writer.flush()
        except (OSError, ValueError):
            # Dead peer: drop the connection so the reader unblocks too.
            _shutdown(conn)

    def close(self) -> None:
        self._closing = True
        try:
            self._sock.close()
        except OSError:
            pass
        for conn in self._conns:
            _shutdown(conn)


class RemoteNodeHandle:
    """Client-side handle: the NodeHandle API spoken over a TCP connection."""

    def __init__(self, address: tuple[str, int], node_id: str, timeout: float = 5.0) -> None:
        self._sock = socket.create_connection(address, timeout=timeout)
        self._sock.settimeout(None)
        self._reader = self._sock.makefile("r", encoding="utf-8", newline="\n")
        self._writer = self._sock.makefile("w", encoding="utf-8", newline="\n")
        self._seq: dict[str, int] = {}
        self._inbox: deque[BusMessage] = deque()
        self._cond = threading.Condition()
        self.closed = False
        self._send(CONTROL_HELLO, {"node_id": node_id})
        welcome = self._read_message(timeout=timeout)
        if welcome is None or welcome.topic != CONTROL_WELCOME:
            raise ProtocolError("no welcome from bus server")
        self.node_id = str(welcome.payload["node_id"])
        self._thread = threading.Thread(target=self._reader_loop, daemon=True, name=f"bus-client-{self.node_id}")
        self._thread.start()

    def _send(self, topic: str, payload: dict) -> int:
        seq = self._seq.get(topic, 0) + 1
        self._seq[topic] = seq
        envelope = {"topic": topic, "seq": seq, "timestamp_ms": 0, "node_id": getattr(self, "node_id", ""), "payload": payload}
        try:
            self._writer.write(json.dumps(envelope) + "\n")
            self._writer.flush()
        except OSError as exc:
            raise BusClosed(f"connection lost: {exc}") from exc
        return seq

    def _read_message(self, timeout: float | None = None) -> BusMessage | None:
        self._sock.settimeout(timeout)
        try:
            line = self._reader.readline()
        finally:
            self._sock.settimeout(None)
        if not line:
            return None
        return envelope_to_message(json.loads(line))

    def _reader_loop(self) -> None:
        try:
            for line in self._reader:
                line = line.strip()
                if not line:
                    continue
                message = envelope_to_message(json.loads(line))
                with self._cond:
                    self._inbox.append(message)
                    self._cond.notify()
        except (OSError, ValueError, ProtocolError):
            pass
        finally:
            self.closed = True
            with self._cond:
                self._cond.notify_all()

    def publish(self, topic: str, payload: dict) -> int:
        if self.closed:
            raise BusClosed("remote handle closed")
        return self._send(topic, payload)

    def subscribe(self, topic: str) -> None:
        self._send(CONTROL_SUBSCRIBE, {"topic": topic})

    def unsubscribe(self, topic: str) -> None:
        self._send(CONTROL_UNSUBSCRIBE, {"topic": topic})

    def try_recv(self) -> BusMessage | None:
        with self._cond:
            return self._inbox.popleft() if self._inbox else None

    def recv(self, timeout: float | None = None) -> BusMessage | None:
        deadline = None if timeout is None else (threading.TIMEOUT_MAX if timeout < 0 else timeout)
        with self._cond:
            if not self._inbox and not self.closed:
                self._cond.wait(deadline)
            return self._inbox.popleft() if self._inbox else None

    def close(self) -> None:
        self.closed = True
        _shutdown(self._sock)


def _shutdown(sock: socket.socket) -> None:
    # close() alone defers the FIN while makefile() wrappers hold the fd
    try:
        sock.shutdown(socket.SHUT_RDWR)
    except OSError:
        pass
    try:
        sock.close()
    except OSError:
        pass


def serve_tcp(bus: Bus, host: str = "127.0.0.1", port: int = 7001) -> TcpBusServer:
    return TcpBusServer(bus, host, port)


def connect_tcp(address: tuple[str, int], node_id: str, timeout: float = 5.0) -> RemoteNodeHandle:
    try:
        return RemoteNodeHandle(address, node_id, timeout)
    except ConnectionRefusedError:
        raise
