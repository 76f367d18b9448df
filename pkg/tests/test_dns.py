import socket
import struct
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cachefp.dnsserver import (
    DnsConfig,
    DnsLogRecord,
    DnsTimingServer,
    QTYPE_A,
    QTYPE_AAAA,
    RCODE_NOERROR,
    RCODE_NXDOMAIN,
    RCODE_REFUSED,
    ZONE_LOG,
    ZONE_NX,
    _build_query,
    export_memorygram,
    load_log,
    make_probe_qname,
    measure_dns_timer,
    parse_probe_qname,
    parse_query,
    respond,
)
from cachefp.errors import InsufficientRecordsError, MalformedQueryError
from cachefp.trace import SampleKind

CONFIG = DnsConfig(zones={"attack.example": ZONE_LOG, "race.example": ZONE_NX})


def parse_response(data):
    qid, flags, qd, an, ns, ar = struct.unpack("!HHHHHH", data[:12])
    return {"qid": qid, "rcode": flags & 0xF, "qr": bool(flags & 0x8000),
            "aa": bool(flags & 0x0400), "ancount": an}


class TestParseQuery:
    def test_minimal_probe_query(self):
        q = _build_query(0x1234, "a3-7.t1.attack.example", QTYPE_A)
        parsed = parse_query(q)
        assert parsed.qname == "a3-7.t1.attack.example"
        assert parsed.qtype == QTYPE_A
        assert parsed.qid == 0x1234

    def test_name_is_lowercased(self):
        q = _build_query(1, "A3-7.T1.Attack.Example", QTYPE_A)
        assert parse_query(q).qname == "a3-7.t1.attack.example"

    def test_eleven_bytes_malformed(self):
        with pytest.raises(MalformedQueryError):
            parse_query(b"\x00" * 11)

    def test_label_length_64_malformed(self):
        q = _build_query(1, ("x" * 64) + ".example", QTYPE_A)
        with pytest.raises(MalformedQueryError, match="label"):
            parse_query(q)

    def test_compressed_name_rejected(self):
        header = struct.pack("!HHHHHH", 1, 0, 1, 0, 0, 0)
        datagram = header + b"\xc0\x0c" + struct.pack("!HH", 1, 1)
        with pytest.raises(MalformedQueryError, match="compressed"):
            parse_query(datagram)

    def test_response_bit_rejected(self):
        header = struct.pack("!HHHHHH", 1, 0x8000, 1, 0, 0, 0)
        datagram = header + b"\x01a\x00" + struct.pack("!HH", 1, 1)
        with pytest.raises(MalformedQueryError, match="QR"):
            parse_query(datagram)

    def test_truncated_question_malformed(self):
        q = _build_query(1, "a.example", QTYPE_A)
        with pytest.raises(MalformedQueryError):
            parse_query(q[:-3])

    def test_zero_questions_malformed(self):
        header = struct.pack("!HHHHHH", 1, 0, 0, 0, 0, 0)
        with pytest.raises(MalformedQueryError, match="question"):
            parse_query(header)

    def test_overlong_name_malformed(self):
        name = ".".join(["x" * 60] * 5)  # 300+ bytes of labels
        q = _build_query(1, name, QTYPE_A)
        with pytest.raises(MalformedQueryError, match="253"):
            parse_query(q)


class TestRespond:
    def _respond(self, qname, qtype=QTYPE_A):
        query = parse_query(_build_query(7, qname, qtype))
        return respond(query, CONFIG)

    def test_racing_zone_nxdomain(self):
        data, rcode = self._respond("x.race.example")
        assert rcode == RCODE_NXDOMAIN
        meta = parse_response(data)
        assert meta["rcode"] == RCODE_NXDOMAIN
        assert meta["ancount"] == 0
        assert meta["qr"] and meta["aa"]

    def test_logging_zone_single_a_with_ttl_zero(self):
        data, rcode = self._respond("q7-12.t0.attack.example")
        assert rcode == RCODE_NOERROR
        meta = parse_response(data)
        assert meta["ancount"] == 1
        # answer record sits after the echoed question: ptr, type, class, ttl, rdlen, addr
        question_len = len(_build_query(7, "q7-12.t0.attack.example", QTYPE_A)) - 12
        answer = data[12 + question_len:]
        ptr, rtype, rclass, ttl, rdlen = struct.unpack("!HHHIH", answer[:12])
        assert ptr == 0xC00C and rtype == QTYPE_A and ttl == 0 and rdlen == 4
        assert socket.inet_ntoa(answer[12:16]) == CONFIG.answer_addr

    def test_unknown_zone_refused(self):
        data, rcode = self._respond("other.org")
        assert rcode == RCODE_REFUSED
        assert parse_response(data)["rcode"] == RCODE_REFUSED

    def test_aaaa_gets_noerror_without_answers(self):
        data, rcode = self._respond("q1-0.t0.attack.example", qtype=QTYPE_AAAA)
        assert rcode == RCODE_NOERROR
        assert parse_response(data)["ancount"] == 0

    def test_response_echoes_query_id(self):
        data, _ = self._respond("x.race.example")
        assert parse_response(data)["qid"] == 7


class TestQnameConvention:
    @given(
        nonce=st.text(alphabet="abcdefghijklmnopqrstuvwxyz", min_size=1, max_size=12),
        seq=st.integers(0, 10**6),
        trace=st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789", min_size=1,
                      max_size=12),
    )
    def test_round_trip(self, nonce, seq, trace):
        qname = make_probe_qname(nonce, seq, trace, "attack.example")
        assert parse_probe_qname(qname, "attack.example") == (trace, seq)

    def test_sentinel(self):
        assert parse_probe_qname("end.t3.attack.example", "attack.example") == ("t3", None)

    def test_bare_nonce_maps_to_no_seq(self):
        assert parse_probe_qname("kxdfvcgx.t0.attack.example", "attack.example") == ("t0", None)

    def test_foreign_zone_is_none(self):
        assert parse_probe_qname("a-1.t0.other.org", "attack.example") is None


def rec(recv_us, seq, trace_id="t0", qname=None):
    return DnsLogRecord(recv_us=recv_us, qname=qname or f"n-{seq}.{trace_id}.z",
                        trace_id=trace_id, seq=seq, src="127.0.0.1:1", rcode_sent=0)


class TestExportMemorygram:
    def test_sequential_gaps(self):
        gram = export_memorygram([rec(0, 0), rec(3000, 1), rec(7000, 2)], "t0")
        assert gram.values.tolist() == [3000.0, 4000.0]
        assert gram.sample_kind is SampleKind.DNS_GAP

    def test_out_of_order_arrival_uses_seq_order(self):
        # seq 2 arrives before seq 1; gaps computed in seq order
        records = [rec(0, 0), rec(3000, 2), rec(5000, 1)]
        gram = export_memorygram(records, "t0")
        # seq1 at 5000 (gap 5000), seq2 at 3000 (gap -2000 dropped)
        assert gram.values.tolist() == [5000.0]

    def test_missing_seq_gap_absent(self):
        gram = export_memorygram([rec(0, 0), rec(1000, 1), rec(9000, 3)], "t0")
        assert gram.values.tolist() == [1000.0]  # gap to seq 3 omitted

    def test_single_record_errors(self):
        with pytest.raises(InsufficientRecordsError):
            export_memorygram([rec(0, 0)], "t0")

    def test_arrival_order_fallback_without_seq(self):
        records = [rec(0, None, qname="aa.t0.z"), rec(2500, None, qname="bb.t0.z"),
                   rec(4000, None, qname="cc.t0.z")]
        gram = export_memorygram(records, "t0")
        assert gram.values.tolist() == [2500.0, 1500.0]

    def test_filters_by_trace(self):
        records = [rec(0, 0), rec(1000, 1), rec(100, 0, trace_id="t9"),
                   rec(1100, 1, trace_id="t9")]
        gram = export_memorygram(records, "t0")
        assert gram.values.tolist() == [1000.0]


@pytest.fixture
def server(tmp_path):
    srv = DnsTimingServer(CONFIG, port=0, log_path=tmp_path / "dns.log")
    srv.start()
    yield srv
    srv.stop()


class TestLiveServer:
    def test_loopback_queries_logged_and_answered(self, server, tmp_path):
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.settimeout(2)
        gaps_ms = [2, 5, 9, 2, 5]
        for i, gap in enumerate(gaps_ms):
            q = _build_query(i, make_probe_qname("ab", i, "t0", "attack.example"), QTYPE_A)
            sock.sendto(q, ("127.0.0.1", server.port))
            data, _ = sock.recvfrom(4096)
            assert parse_response(data)["rcode"] == RCODE_NOERROR
            time.sleep(gap / 1000)
        sock.close()
        assert server.parsed_count == len(gaps_ms)
        recv = [r.recv_us for r in server.records]
        assert recv == sorted(recv)
        log_lines = (tmp_path / "dns.log").read_text().strip().splitlines()
        assert len(log_lines) == len(gaps_ms)
        records = load_log(tmp_path / "dns.log", zone="attack.example")
        assert [r.seq for r in records] == list(range(len(gaps_ms)))

    def test_malformed_datagram_dropped_not_crashing(self, server):
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.sendto(b"\x01\x02\x03", ("127.0.0.1", server.port))
        sock.settimeout(0.3)
        with pytest.raises(socket.timeout):
            sock.recvfrom(4096)
        sock.close()
        deadline = time.time() + 2
        while server.rejected_count == 0 and time.time() < deadline:
            time.sleep(0.01)
        assert server.rejected_count == 1

    def test_measure_dns_timer_loopback(self, server):
        n = 50
        summary = measure_dns_timer(("127.0.0.1", server.port), n=n, rate_hz=200,
                                    zone="race.example")
        assert summary.count == n
        assert summary.censored == 0
        # unique names defeat caching: every query reaches the server
        assert server.parsed_count == n
        assert all(r.rcode_sent == RCODE_NXDOMAIN for r in server.records)
        assert summary.median_ms < 2.0

    def test_measure_dns_timer_zero_queries(self):
        summary = measure_dns_timer(("127.0.0.1", 1), n=0)
        assert summary.count == 0 and summary.median_ms is None
