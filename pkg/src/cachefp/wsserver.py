"""Minimal WebSocket endpoint that timestamps short frames.

The server's only job is to be a remote clock: a client brackets each cache
probe with two tiny text frames, and the server-side inter-frame deltas are
the probe durations. Frames are timestamped at the first header byte
(probe frames are single-read, which keeps server-side variance down), and
per-connection logs are append-only.

Supported surface is deliberately small: no TLS, no permessage-deflate, and
fragmentation closes the connection.
"""

from __future__ import annotations

import base64
import hashlib
import logging
import os
import socket
import struct
import threading
import time
from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

import numpy as np

from .errors import InsufficientRecordsError
from .trace import Memorygram, SampleKind, Technique

logger = logging.getLogger(__name__)

WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

OP_CONT = 0x0
OP_TEXT = 0x1
OP_BINARY = 0x2
OP_CLOSE = 0x8
OP_PING = 0x9
OP_PONG = 0xA

CLOSE_PROTOCOL_ERROR = 1002

PROBE_PAYLOAD_LIMIT = 125


class ProtocolError(Exception):
    def __init__(self, message: str, close_code: int = CLOSE_PROTOCOL_ERROR):
        super().__init__(message)
        self.close_code = close_code


@dataclass(frozen=True)
class WsLogRecord:
    recv_us: int
    conn_id: int
    payload_head: bytes  # first 16 bytes, carries trace/seq if the client sends one


def accept_key(key: str) -> str:
    """Sec-WebSocket-Accept for a client key (SHA-1 of key+GUID, base64)."""
    digest = hashlib.sha1((key + WS_GUID).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


def handshake(request: bytes) -> Tuple[bytes, bool]:
    """Response bytes for an opening handshake; (response, ok).

    A well-formed GET with ``Upgrade: websocket`` and a key gets 101 with
    the computed accept value; anything else gets 400.
    """
    bad = (b"HTTP/1.1 400 Bad Request\r\nConnection: close\r\n\r\n", False)
    try:
        head, _, _ = request.partition(b"\r\n\r\n")
        lines = head.decode("latin-1").split("\r\n")
        method, _path, version = lines[0].split(" ", 2)
    except ValueError:
        return bad
    if method != "GET" or not version.startswith("HTTP/1.1"):
        return bad
    headers = {}
    for line in lines[1:]:
        name, sep, value = line.partition(":")
        if sep:
            headers[name.strip().lower()] = value.strip()
    if "websocket" not in headers.get("upgrade", "").lower():
        return bad
    key = headers.get("sec-websocket-key")
    if not key:
        return bad
    response = (
        "HTTP/1.1 101 Switching Protocols\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Accept: {accept_key(key)}\r\n"
        "\r\n"
    ).encode("latin-1")
    return response, True


@dataclass(frozen=True)
class Frame:
    opcode: int
    payload: bytes
    recv_us: int
    oversize: bool  # payload beyond the probe-frame budget, accepted but flagged


def _read_exact(reader, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = reader(n - len(buf))
        if not chunk:
            raise ConnectionError("connection closed mid-frame")
        buf += chunk
    return buf


def _mono_us() -> int:
    return time.monotonic_ns() // 1000


def read_frame(reader) -> Frame:
    """Parse one client frame from ``reader(n) -> bytes``.

    Client frames must be masked (close 1002 otherwise, per the protocol);
    the timestamp is taken right after the first header byte arrives.
    """
    b0 = _read_exact(reader, 1)[0]
    recv_us = _mono_us()
    fin = b0 & 0x80
    opcode = b0 & 0x0F
    if not fin or opcode == OP_CONT:
        raise ProtocolError("fragmented frames not supported")
    b1 = _read_exact(reader, 1)[0]
    masked = b1 & 0x80
    length = b1 & 0x7F
    if length == 126:
        length = struct.unpack("!H", _read_exact(reader, 2))[0]
    elif length == 127:
        length = struct.unpack("!Q", _read_exact(reader, 8))[0]
    if not masked:
        raise ProtocolError("unmasked client frame")
    mask = _read_exact(reader, 4)
    payload = _read_exact(reader, length)
    payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
    return Frame(opcode=opcode, payload=payload, recv_us=recv_us,
                 oversize=length > PROBE_PAYLOAD_LIMIT)


def encode_frame(opcode: int, payload: bytes, mask: bool = False) -> bytes:
    header = bytes([0x80 | opcode])
    length = len(payload)
    if length <= 125:
        header += bytes([(0x80 if mask else 0) | length])
    elif length < (1 << 16):
        header += bytes([(0x80 if mask else 0) | 126]) + struct.pack("!H", length)
    else:
        header += bytes([(0x80 if mask else 0) | 127]) + struct.pack("!Q", length)
    if mask:
        key = os.urandom(4)
        return header + key + bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    return header + payload


class WsTimingServer:
    """Accept loop with one handler thread per connection."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0, log_path=None):
        self.records: List[WsLogRecord] = []
        self._records_lock = threading.Lock()
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(16)
        self.addr = self._listener.getsockname()
        self._log_fh = open(log_path, "w", encoding="utf-8", newline="\n") if log_path else None
        self._running = False
        self._thread: Optional[threading.Thread] = None
        self._next_conn_id = 0

    @property
    def port(self) -> int:
        return self.addr[1]

    def _log(self, rec: WsLogRecord):
        with self._records_lock:
            self.records.append(rec)
            if self._log_fh:
                self._log_fh.write(
                    f"{rec.recv_us}\t{rec.conn_id}\t{rec.payload_head.hex()}\n"
                )
                self._log_fh.flush()

    def _handle(self, conn: socket.socket, conn_id: int):
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        try:
            request = b""
            while b"\r\n\r\n" not in request:
                chunk = conn.recv(4096)
                if not chunk:
                    return
                request += chunk
            response, ok = handshake(request)
            conn.sendall(response)
            if not ok:
                return
            reader = conn.recv
            while True:
                try:
                    frame = read_frame(reader)
                except ProtocolError as exc:
                    conn.sendall(encode_frame(OP_CLOSE, struct.pack("!H", exc.close_code)))
                    return
                except ConnectionError:
                    return
                if frame.opcode == OP_PING:
                    conn.sendall(encode_frame(OP_PONG, frame.payload))
                    continue  # control traffic is not probe traffic; no record
                if frame.opcode == OP_CLOSE:
                    conn.sendall(encode_frame(OP_CLOSE, frame.payload[:2]))
                    return
                if frame.opcode in (OP_TEXT, OP_BINARY):
                    if frame.oversize:
                        logger.warning("conn %d: oversize probe frame (%d bytes)",
                                       conn_id, len(frame.payload))
                    self._log(WsLogRecord(recv_us=frame.recv_us, conn_id=conn_id,
                                          payload_head=frame.payload[:16]))
        finally:
            conn.close()

    def _accept_loop(self):
        while self._running:
            try:
                conn, _src = self._listener.accept()
            except OSError:
                break
            conn_id = self._next_conn_id
            self._next_conn_id += 1
            threading.Thread(target=self._handle, args=(conn, conn_id), daemon=True).start()

    def start(self):
        self._running = True
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._thread.start()

    def stop(self):
        self._running = False
        try:
            self._listener.close()
        finally:
            if self._thread:
                self._thread.join(timeout=2)
            if self._log_fh:
                self._log_fh.close()
                self._log_fh = None

    def serve_forever(self):
        self._running = True
        self._accept_loop()


def export_memorygram(records: Iterable[WsLogRecord], conn_id: int,
                      technique: Technique = Technique.STRING_SOCK,
                      arch: str = "unknown", label: Optional[str] = None) -> Memorygram:
    """Successive inter-frame deltas for one connection, in microseconds."""
    recs = sorted((r for r in records if r.conn_id == conn_id), key=lambda r: r.recv_us)
    if len(recs) < 2:
        raise InsufficientRecordsError(f"{len(recs)} records for connection {conn_id}")
    t0 = recs[0].recv_us
    t_us = np.array([r.recv_us - t0 for r in recs[1:]], dtype=np.int64)
    values = np.diff([r.recv_us for r in recs]).astype(np.float64)
    if len(t_us) > 1:
        ramp = np.arange(len(t_us), dtype=np.int64)
        t_us = np.maximum.accumulate(t_us - ramp) + ramp
    return Memorygram(t_us=t_us, values=values, sample_kind=SampleKind.WS_GAP,
                      duration_ms=int(t_us[-1] // 1000) + 1, technique=technique,
                      arch_profile=arch, label=label)


class WsProbeClient:
    """Client half of the measurement: handshake plus short masked frames."""

    def __init__(self, host: str, port: int, timeout_s: float = 5.0):
        self.sock = socket.create_connection((host, port), timeout=timeout_s)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        key = base64.b64encode(os.urandom(16)).decode("ascii")
        request = (
            f"GET /probe HTTP/1.1\r\nHost: {host}:{port}\r\n"
            "Upgrade: websocket\r\nConnection: Upgrade\r\n"
            f"Sec-WebSocket-Key: {key}\r\nSec-WebSocket-Version: 13\r\n\r\n"
        ).encode("latin-1")
        self.sock.sendall(request)
        reply = b""
        while b"\r\n\r\n" not in reply:
            chunk = self.sock.recv(4096)
            if not chunk:
                raise ConnectionError("server closed during handshake")
            reply += chunk
        status = reply.split(b"\r\n", 1)[0]
        if b"101" not in status:
            raise ConnectionError(f"handshake rejected: {status!r}")
        expected = accept_key(key).encode("ascii")
        if expected not in reply:
            raise ConnectionError("bad Sec-WebSocket-Accept")

    def send_probe(self, payload: bytes = b"p"):
        self.sock.sendall(encode_frame(OP_TEXT, payload, mask=True))

    def close(self):
        try:
            self.sock.sendall(encode_frame(OP_CLOSE, struct.pack("!H", 1000), mask=True))
        except OSError:
            pass
        self.sock.close()


def jitter_stddev_ms(deltas_us: Iterable[float], nominal_ms: float) -> float:
    """Stddev of observed deltas minus the nominal spacing, in ms.

    Pure so a recorded log replays to the exact same number.
    """
    deltas = np.asarray(list(deltas_us), dtype=np.float64)
    if deltas.size == 0:
        raise InsufficientRecordsError("no deltas to evaluate")
    return float(np.std(deltas / 1000.0 - nominal_ms))


def measure_ws_jitter(host: str, port: int, rate_hz: float = 100.0,
                      duration_s: float = 30.0,
                      server: Optional[WsTimingServer] = None) -> float:
    """Send short frames at ``rate_hz`` for ``duration_s`` and report the
    stddev (ms) of the server-side deltas against the nominal spacing.

    With ``server`` given, deltas come straight from its in-memory log
    (loopback tests); otherwise the caller parses the server's log file.
    """
    n = int(rate_hz * duration_s)
    if n < 2:
        raise InsufficientRecordsError(f"{n} probes scheduled; need >= 2")
    conn_id_before = server._next_conn_id if server else None
    client = WsProbeClient(host, port)
    interval = 1.0 / rate_hz
    start = time.perf_counter()
    try:
        for i in range(n):
            client.send_probe(b"p%03d" % (i % 1000))
            target = start + (i + 1) * interval
            while True:
                now = time.perf_counter()
                if now >= target:
                    break
                if target - now > 0.002:
                    time.sleep(target - now - 0.0015)
        time.sleep(0.2)  # drain in-flight frames
    finally:
        client.close()
    if server is None:
        raise ValueError("measure_ws_jitter needs a server handle or an external log")
    records = [r for r in server.records if r.conn_id == conn_id_before]
    gram = export_memorygram(records, conn_id_before)
    return jitter_stddev_ms(gram.values, nominal_ms=1000.0 / rate_hz)
