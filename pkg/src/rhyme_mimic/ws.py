"""Minimal RFC 6455 websocket layer for the operator-console bridge.

Text frames only, one bus envelope per message, same schema as the TCP
transport.  Connected consoles are just remote bus nodes: they subscribe
with control envelopes and publish operator commands; the bridge
downsamples pose/frames to keep rendering traffic sane.
"""
from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import socket
import struct
import threading
import time

from . import bus as busmod

logger = logging.getLogger(__name__)

_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

OP_TEXT = 0x1
OP_CLOSE = 0x8
OP_PING = 0x9
OP_PONG = 0xA

# Rendering cap for skeleton frames forwarded to consoles (10 Hz).
POSE_FRAME_MIN_INTERVAL_S = 0.1


class WsError(Exception):
    pass


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = b""
    while len(chunks) < n:
        part = sock.recv(n - len(chunks))
        if not part:
            raise WsError("connection closed mid-frame")
        chunks += part
    return chunks


def read_frame(sock: socket.socket) -> tuple[int, bytes]:
    header = _recv_exact(sock, 2)
    fin = header[0] & 0x80
    opcode = header[0] & 0x0F
    if not fin:
        raise WsError("fragmented frames not supported")
    masked = header[1] & 0x80
    length = header[1] & 0x7F
    if length == 126:
        (length,) = struct.unpack(">H", _recv_exact(sock, 2))
    elif length == 127:
        (length,) = struct.unpack(">Q", _recv_exact(sock, 8))
    if masked:
        key = _recv_exact(sock, 4)
        payload = bytearray(_recv_exact(sock, length))
        for i in range(length):
            payload[i] ^= key[i % 4]
        return opcode, bytes(payload)
    return opcode, _recv_exact(sock, length)


def write_frame(sock: socket.socket, opcode: int, payload: bytes, mask: bool) -> None:
    header = bytearray([0x80 | opcode])
    length = len(payload)
    mask_bit = 0x80 if mask else 0
    if length < 126:
        header.append(mask_bit | length)
    elif length < 1 << 16:
        header.append(mask_bit | 126)
        header += struct.pack(">H", length)
    else:
        header.append(mask_bit | 127)
        header += struct.pack(">Q", length)
    if mask:
        key = os.urandom(4)
        header += key
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    sock.sendall(bytes(header) + payload)


def _read_http_head(sock: socket.socket) -> bytes:
    # Byte-wise read so nothing past the head (the first frame) is consumed.
    data = b""
    while not data.endswith(b"\r\n\r\n"):
        part = sock.recv(1)
        if not part:
            raise WsError("connection closed during handshake")
        data += part
        if len(data) > 65536:
            raise WsError("handshake too large")
    return data


def accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + _GUID).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


class WsBridgeServer:
    """Accepts console websockets and proxies them onto the bus."""

    def __init__(self, bus: busmod.Bus, host: str = "127.0.0.1", port: int = 7002) -> None:
        self.bus = bus
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen()
        self.address = self._sock.getsockname()
        self._closing = False
        self._conns: list[socket.socket] = []
        self._diag = bus.register("ws-bridge")
        threading.Thread(target=self._accept_loop, daemon=True, name="ws-accept").start()

    def _accept_loop(self) -> None:
        while not self._closing:
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            self._conns.append(conn)
            threading.Thread(target=self._serve_conn, args=(conn,), daemon=True).start()

    def _handshake(self, conn: socket.socket) -> None:
        head = _read_http_head(conn).decode("latin-1")
        key = None
        for line in head.split("\r\n")[1:]:
            if ":" in line:
                name, value = line.split(":", 1)
                if name.strip().lower() == "sec-websocket-key":
                    key = value.strip()
        if key is None:
            conn.sendall(b"HTTP/1.1 400 Bad Request\r\n\r\n")
            raise WsError("missing Sec-WebSocket-Key")
        response = (
            "HTTP/1.1 101 Switching Protocols\r\n"
            "Upgrade: websocket\r\n"
            "Connection: Upgrade\r\n"
            f"Sec-WebSocket-Accept: {accept_key(key)}\r\n\r\n"
        )
        conn.sendall(response.encode("latin-1"))

    def _serve_conn(self, conn: socket.socket) -> None:
        handle = None
        stop = threading.Event()
        send_lock = threading.Lock()
        try:
            self._handshake(conn)
            handle = self.bus.register("console")
            with send_lock:
                write_frame(
                    conn,
                    OP_TEXT,
                    json.dumps(
                        busmod.BusMessage(
                            busmod.CONTROL_WELCOME, 0, self.bus.clock.now_ms(), "bus",
                            {"node_id": handle.node_id},
                        ).to_envelope()
                    ).encode("utf-8"),
                    mask=False,
                )
            threading.Thread(
                target=self._writer_loop, args=(handle, conn, stop, send_lock), daemon=True
            ).start()
            while not stop.is_set():
                opcode, payload = read_frame(conn)
                if opcode == OP_CLOSE:
                    break
                if opcode == OP_PING:
                    with send_lock:
                        write_frame(conn, OP_PONG, payload, mask=False)
                    continue
                if opcode != OP_TEXT:
                    continue
                message = busmod.envelope_to_message(json.loads(payload.decode("utf-8")))
                if message.topic == busmod.CONTROL_SUBSCRIBE:
                    self.bus.subscribe(handle, str(message.payload["topic"]))
                elif message.topic == busmod.CONTROL_UNSUBSCRIBE:
                    self.bus.unsubscribe(handle, str(message.payload["topic"]))
                elif message.topic == busmod.CONTROL_HELLO:
                    continue
                else:
                    self.bus.publish(handle, message.topic, message.payload)
        except (WsError, OSError, ValueError, KeyError, busmod.ProtocolError, busmod.BusClosed) as exc:
            logger.debug("console connection ended: %s", exc)
        finally:
            stop.set()
            if handle is not None:
                node_id = handle.node_id
                handle.close()
                self.bus.diagnostics["remote_disconnects"] += 1
                if not self.bus.closed and not self._closing:
                    try:
                        self._diag.publish(
                            busmod.TOPIC_SYSTEM_DIAGNOSTICS,
                            {"event": "console_disconnected", "node_id": node_id},
                        )
                    except busmod.BusClosed:
                        pass
            try:
                conn.close()
            except OSError:
                pass

    def _writer_loop(self, handle, conn, stop: threading.Event, send_lock) -> None:
        last_pose_forward = 0.0
        try:
            while not stop.is_set():
                message = handle.recv(timeout=0.1)
                if message is None:
                    continue
                if message.topic == busmod.TOPIC_POSE_FRAMES:
                    now = time.monotonic()
                    if now - last_pose_forward < POSE_FRAME_MIN_INTERVAL_S:
                        continue
                    last_pose_forward = now
                data = json.dumps(message.to_envelope()).encode("utf-8")
                with send_lock:
                    write_frame(conn, OP_TEXT, data, mask=False)
        except (OSError, WsError):
            stop.set()

    def close(self) -> None:
        self._closing = True
        try:
            self._sock.close()
        except OSError:
            pass
        for conn in self._conns:
            try:
                conn.close()
            except OSError:
                pass


class WsClient:
    """Scripted console client; also handy for driving the bridge in tests."""

    def __init__(self, host: str, port: int, path: str = "/", timeout: float = 5.0) -> None:
        self._sock = socket.create_connection((host, port), timeout=timeout)
        key = base64.b64encode(os.urandom(16)).decode("ascii")
        request = (
            f"GET {path} HTTP/1.1\r\n"
            f"Host: {host}:{port}\r\n"
            "Upgrade: websocket\r\n"
            "Connection: Upgrade\r\n"
            f"Sec-WebSocket-Key: {key}\r\n"
            "Sec-WebSocket-Version: 13\r\n\r\n"
        )
        self._sock.sendall(request.encode("latin-1"))
        head = _read_http_head(self._sock).decode("latin-1")
        status = head.split("\r\n", 1)[0]
        if "101" not in status:
            raise WsError(f"handshake refused: {status}")
        expected = accept_key(key)
        if f"Sec-WebSocket-Accept: {expected}" not in head:
            raise WsError("bad Sec-WebSocket-Accept")
        self._sock.settimeout(None)

    def send_text(self, text: str) -> None:
        write_frame(self._sock, OP_TEXT, text.encode("utf-8"), mask=True)

    def send_envelope(self, topic: str, payload: dict, node_id: str = "console") -> None:
        self.send_text(
            json.dumps(
                {"topic": topic, "seq": 0, "timestamp_ms": 0, "node_id": node_id, "payload": payload}
            )
        )

    def subscribe(self, topic: str) -> None:
        self.send_envelope(busmod.CONTROL_SUBSCRIBE, {"topic": topic})

    def recv_text(self, timeout: float | None = 5.0) -> str | None:
        self._sock.settimeout(timeout)
        try:
            while True:
                opcode, payload = read_frame(self._sock)
                if opcode == OP_TEXT:
                    return payload.decode("utf-8")
                if opcode == OP_CLOSE:
                    return None
                if opcode == OP_PING:
                    write_frame(self._sock, OP_PONG, payload, mask=True)
        except socket.timeout:
            return None
        finally:
            self._sock.settimeout(None)

    def recv_envelope(self, timeout: float | None = 5.0) -> dict | None:
        text = self.recv_text(timeout)
        return None if text is None else json.loads(text)

    def close(self) -> None:
        try:
            write_frame(self._sock, OP_CLOSE, b"", mask=True)
        except OSError:
            pass
        try:
            self._sock.close()
        except OSError:
            pass
