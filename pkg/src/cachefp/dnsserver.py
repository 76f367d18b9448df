"""Minimal authoritative DNS responder that timestamps every query.

Zones come in two flavors: *racing* zones answer NXDOMAIN for everything
under them (the round-trip to the error is the client's external clock),
and *logging* zones answer a fixed A record with TTL 0 (so every probe
re-queries and the per-query arrival times become the trace). REFUSED for
anything else. UDP only; queries fit in 512 bytes.

Query names follow ``<nonce>-<seq>.<trace_id>.<zone>`` so gaps can be
attributed per trace and ordered by sequence even when datagrams reorder;
bare-nonce names (``<nonce>.<trace_id>.<zone>``) are also accepted, in
which case export falls back to arrival order. ``end.<trace_id>.<zone>``
marks trace completion.
"""

from __future__ import annotations

import logging
import socket
import struct
import threading
import time
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from .errors import InsufficientRecordsError, MalformedQueryError
from .trace import Memorygram, SampleKind, Technique

logger = logging.getLogger(__name__)

QTYPE_A = 1
QTYPE_AAAA = 28
RCODE_NOERROR = 0
RCODE_NXDOMAIN = 3
RCODE_REFUSED = 5

ZONE_NX = "nx"
ZONE_LOG = "log"

MAX_NAME = 253
MAX_LABEL = 63


@dataclass(frozen=True)
class ParsedQuery:
    qid: int
    qname: str  # lowercase, dot-joined labels
    qtype: int
    question: bytes  # raw question section, echoed into the response
    rd: int


@dataclass(frozen=True)
class DnsLogRecord:
    recv_us: int
    qname: str
    trace_id: Optional[str]
    seq: Optional[int]
    src: str
    rcode_sent: int


def parse_query(datagram: bytes) -> ParsedQuery:
    """Parse the header and first question of a query datagram.

    Rejects anything that cannot be answered deterministically: short or
    truncated datagrams, responses, zero-question messages, compressed
    names in the question, oversized labels or names.
    """
    if len(datagram) < 12:
        raise MalformedQueryError(f"datagram too short ({len(datagram)} bytes)")
    qid, flags, qdcount, _an, _ns, _ar = struct.unpack("!HHHHHH", datagram[:12])
    if flags & 0x8000:
        raise MalformedQueryError("QR bit set (not a query)")
    if qdcount < 1:
        raise MalformedQueryError("no question section")
    labels = []
    pos = 12
    name_len = 0
    while True:
        if pos >= len(datagram):
            raise MalformedQueryError("truncated name")
        length = datagram[pos]
        if length == 0:
            pos += 1
            break
        if (length & 0xC0) == 0xC0:
            raise MalformedQueryError("compressed name in question")
        if length > MAX_LABEL:
            raise MalformedQueryError(f"label length {length} > {MAX_LABEL}")
        if pos + 1 + length > len(datagram):
            raise MalformedQueryError("truncated label")
        name_len += length + 1
        if name_len > MAX_NAME + 1:
            raise MalformedQueryError("name longer than 253 bytes")
        raw = datagram[pos + 1: pos + 1 + length]
        try:
            labels.append(raw.decode("ascii").lower())
        except UnicodeDecodeError:
            raise MalformedQueryError("non-ascii label") from None
        pos += 1 + length
    if pos + 4 > len(datagram):
        raise MalformedQueryError("truncated question")
    qtype, _qclass = struct.unpack("!HH", datagram[pos: pos + 4])
    return ParsedQuery(
        qid=qid,
        qname=".".join(labels),
        qtype=qtype,
        question=datagram[12: pos + 4],
        rd=(flags >> 8) & 1,
    )


@dataclass(frozen=True)
class DnsConfig:
    """zones: mapping of zone name -> ZONE_NX | ZONE_LOG."""

    zones: Dict[str, str]
    answer_addr: str = "192.0.2.1"
    answer_ttl: int = 0  # TTL 0 defeats caching: every probe re-queries

    def zone_of(self, qname: str) -> Tuple[Optional[str], Optional[str]]:
        best = None
        for zone, mode in self.zones.items():
            if qname == zone or qname.endswith("." + zone):
                if best is None or len(zone) > len(best[0]):
                    best = (zone, mode)
        return best if best else (None, None)


def respond(query: ParsedQuery, config: DnsConfig) -> Tuple[bytes, int]:
    """Build the response datagram; returns (bytes, rcode).

    Racing zone -> NXDOMAIN with zero answers; logging zone -> NOERROR with
    one A record (AAAA and other types get NOERROR with no answers); any
    other name -> REFUSED.
    """
    zone, mode = config.zone_of(query.qname)
    answers = b""
    ancount = 0
    aa = 0x0400
    if mode == ZONE_NX:
        rcode = RCODE_NXDOMAIN
    elif mode == ZONE_LOG:
        rcode = RCODE_NOERROR
        if query.qtype == QTYPE_A:
            addr = socket.inet_aton(config.answer_addr)
            answers = struct.pack("!HHHIH", 0xC00C, QTYPE_A, 1, config.answer_ttl, 4) + addr
            ancount = 1
    else:
        rcode = RCODE_REFUSED
        aa = 0
    flags = 0x8000 | aa | (query.rd << 8) | rcode
    header = struct.pack("!HHHHHH", query.qid, flags, 1, ancount, 0, 0)
    return header + query.question + answers, rcode


def make_probe_qname(nonce: str, seq: int, trace_id: str, zone: str) -> str:
    return f"{nonce}-{seq}.{trace_id}.{zone}"


def parse_probe_qname(qname: str, zone: str) -> Optional[Tuple[str, Optional[int]]]:
    """Extract (trace_id, seq) from a probe name; seq is None for sentinel
    and bare-nonce names. Returns None if the name is not under ``zone``."""
    suffix = "." + zone
    if not qname.endswith(suffix):
        return None
    rest = qname[: -len(suffix)]
    parts = rest.split(".")
    if len(parts) != 2:
        return None
    head, trace_id = parts
    if head == "end":
        return trace_id, None
    nonce, dash, seq = head.rpartition("-")
    if dash and seq.isdigit():
        return trace_id, int(seq)
    return trace_id, None


def _mono_us() -> int:
    return time.monotonic_ns() // 1000


class DnsTimingServer:
    """Single-loop UDP responder with an append-only timestamped log."""

    def __init__(self, config: DnsConfig, host: str = "127.0.0.1", port: int = 0,
                 log_path=None):
        self.config = config
        self.records: List[DnsLogRecord] = []
        self.parsed_count = 0
        self.rejected_count = 0
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind((host, port))
        self.addr = self._sock.getsockname()
        self._log_fh = open(log_path, "w", encoding="utf-8", newline="\n") if log_path else None
        self._thread: Optional[threading.Thread] = None
        self._running = False

    @property
    def port(self) -> int:
        return self.addr[1]

    def handle_datagram(self, datagram: bytes, src: Tuple[str, int],
                        recv_us: Optional[int] = None) -> Optional[bytes]:
        """Full handling for one datagram; the socket loop is a thin shim
        over this. Returns the response, or None for dropped queries."""
        if recv_us is None:
            recv_us = _mono_us()
        try:
            query = parse_query(datagram)
        except MalformedQueryError as exc:
            self.rejected_count += 1
            logger.debug("dropped malformed query from %s: %s", src, exc)
            return None
        response, rcode = respond(query, self.config)
        self.parsed_count += 1
        zone, mode = self.config.zone_of(query.qname)
        trace_id = seq = None
        if zone is not None:
            parsed = parse_probe_qname(query.qname, zone)
            if parsed:
                trace_id, seq = parsed
        rec = DnsLogRecord(recv_us=recv_us, qname=query.qname, trace_id=trace_id,
                           seq=seq, src=f"{src[0]}:{src[1]}", rcode_sent=rcode)
        self.records.append(rec)
        if self._log_fh:
            self._log_fh.write(f"{rec.recv_us}\t{rec.qname}\t{rec.src}\t{rec.rcode_sent}\n")
            self._log_fh.flush()
        return response

    def _loop(self):
        while self._running:
            try:
                datagram, src = self._sock.recvfrom(4096)
            except OSError:
                break
            recv_us = _mono_us()  # timestamp at receipt, before parsing
            response = self.handle_datagram(datagram, src, recv_us)
            if response is not None:
                try:
                    self._sock.sendto(response, src)
                except OSError:
                    pass

    def start(self):
        self._running = True
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def stop(self):
        self._running = False
        try:
            self._sock.close()
        finally:
            if self._thread:
                self._thread.join(timeout=2)
            if self._log_fh:
                self._log_fh.close()
                self._log_fh = None

    def serve_forever(self):
        self._running = True
        self._loop()


def export_memorygram(records: Iterable[DnsLogRecord], trace_id: str,
                      technique: Technique = Technique.CSS_PP,
                      arch: str = "unknown", label: Optional[str] = None) -> Memorygram:
    """Inter-arrival gaps for one trace as a memorygram.

    Records are ordered by sequence number when present (gaps whose
    predecessor sequence is missing are omitted; a negative gap from an
    arrival-order violation is dropped with a warning). Without sequence
    numbers the arrival order is used as-is.
    """
    recs = [r for r in records if r.trace_id == trace_id and not r.qname.startswith("end.")]
    if len(recs) < 2:
        raise InsufficientRecordsError(f"{len(recs)} records for trace {trace_id!r}")
    have_seq = [r for r in recs if r.seq is not None]
    t0 = min(r.recv_us for r in recs)
    samples = []
    if have_seq:
        by_seq = {}
        for r in have_seq:
            by_seq.setdefault(r.seq, r)  # first arrival wins
        seqs = sorted(by_seq)
        for s in seqs:
            if s - 1 not in by_seq:
                continue  # predecessor missing: gap marked absent
            gap = by_seq[s].recv_us - by_seq[s - 1].recv_us
            if gap < 0:
                logger.warning("trace %s seq %d: negative gap %d us dropped", trace_id, s, gap)
                continue
            samples.append((by_seq[s].recv_us - t0, float(gap)))
    else:
        ordered = sorted(recs, key=lambda r: r.recv_us)
        for prev, cur in zip(ordered, ordered[1:]):
            samples.append((cur.recv_us - t0, float(cur.recv_us - prev.recv_us)))
    if len(samples) < 1:
        raise InsufficientRecordsError(f"no usable gaps for trace {trace_id!r}")
    samples.sort()
    t_us = np.array([t for t, _ in samples], dtype=np.int64)
    values = np.array([v for _, v in samples])
    if len(t_us) > 1:  # same-microsecond arrivals: bump to keep t strictly increasing
        ramp = np.arange(len(t_us), dtype=np.int64)
        t_us = np.maximum.accumulate(t_us - ramp) + ramp
    duration_ms = int(t_us[-1] // 1000) + 1
    return Memorygram(t_us=t_us, values=values, sample_kind=SampleKind.DNS_GAP,
                      duration_ms=duration_ms, technique=technique,
                      arch_profile=arch, label=label)


@dataclass
class TimerSummary:
    count: int
    censored: int
    median_ms: Optional[float]
    stddev_ms: Optional[float]
    rtts_ms: tuple


def measure_dns_timer(resolver: Tuple[str, int], n: int, rate_hz: float = 50.0,
                      zone: str = "race.example", timeout_s: float = 1.0) -> TimerSummary:
    """Round-trip distribution of ``n`` unique NXDOMAIN lookups.

    Unique names defeat caching so every query reaches the server; timeouts
    are recorded as censored observations rather than dropped silently.
    """
    if n == 0:
        return TimerSummary(count=0, censored=0, median_ms=None, stddev_ms=None, rtts_ms=())
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.settimeout(timeout_s)
    rtts = []
    censored = 0
    interval = 1.0 / rate_hz if rate_hz > 0 else 0.0
    next_at = time.monotonic()
    try:
        for i in range(n):
            qname = make_probe_qname(f"m{i:06d}x", i, "timer", zone)
            query = _build_query(i & 0xFFFF, qname, QTYPE_A)
            t0 = time.monotonic_ns()
            sock.sendto(query, resolver)
            try:
                sock.recvfrom(4096)
                rtts.append((time.monotonic_ns() - t0) / 1e6)
            except socket.timeout:
                censored += 1
            next_at += interval
            pause = next_at - time.monotonic()
            if pause > 0:
                time.sleep(pause)
    finally:
        sock.close()
    arr = np.asarray(rtts)
    return TimerSummary(
        count=len(rtts),
        censored=censored,
        median_ms=float(np.median(arr)) if len(rtts) else None,
        stddev_ms=float(np.std(arr)) if len(rtts) else None,
        rtts_ms=tuple(rtts),
    )


def _build_query(qid: int, qname: str, qtype: int, rd: int = 0) -> bytes:
    name = b"".join(
        struct.pack("B", len(label)) + label.encode("ascii") for label in qname.split(".")
    ) + b"\x00"
    header = struct.pack("!HHHHHH", qid, (rd & 1) << 8, 1, 0, 0, 0)
    return header + name + struct.pack("!HH", qtype, 1)


def load_log(path, zone: Optional[str] = None) -> List[DnsLogRecord]:
    """Read a server log TSV (recv_us, qname, src, rcode); when ``zone`` is
    given, trace_id/seq are re-parsed from the query names."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            recv_us, qname, src, rcode = line.split("\t")
            trace_id = seq = None
            if zone:
                parsed = parse_probe_qname(qname, zone)
                if parsed:
                    trace_id, seq = parsed
            records.append(DnsLogRecord(recv_us=int(recv_us), qname=qname,
                                        trace_id=trace_id, seq=seq, src=src,
                                        rcode_sent=int(rcode)))
    return records
