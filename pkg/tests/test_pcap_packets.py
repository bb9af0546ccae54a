import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles as o
from ddos_advtrain import packets as pk
from ddos_advtrain.flows import parse_packets
from ddos_advtrain.pcap import (PcapError, RawPacket, UnsupportedLinkType, iter_pcap_bytes, pcap_bytes,
                                read_pcap, write_pcap)


def test_hand_tcp_frame_decodes_to_its_fields():
    f = o.tcp_frame("10.0.0.1", "10.0.0.2", 1234, 80, seq=7, ack=99, flags=0x12, window=8192,
                    payload=b"GET / HTTP/1.1\r\n\r\n", ip_flags=2, ip_id=42)
    p = pk.decode(f)
    assert (p.src, p.dst, p.proto, p.sport, p.dport) == ("10.0.0.1", "10.0.0.2", 6, 1234, 80)
    assert (p.seq, p.ack, p.tcp_flags, p.window, p.ip_flags, p.ip_id) == (7, 99, 0x12, 8192, 2, 42)
    assert p.payload == b"GET / HTTP/1.1\r\n\r\n"
    assert p.to_bytes() == f  # round trip is byte exact


def test_hand_udp_and_icmp_frames_round_trip():
    for f in (o.udp_frame("10.0.0.1", "8.8.8.8", 5353, 53, b"x" * 64),
              o.icmp_frame("10.0.0.1", "10.0.0.2", 8, b"ping")):
        assert pk.decode(f).to_bytes() == f
        assert pk.checksums_valid(f)


def test_checksum_matches_independent_sum():
    rng = np.random.default_rng(0)
    for n in (0, 1, 2, 3, 20, 21, 1500):
        data = bytes(rng.integers(0, 256, size=n, dtype=np.uint8))
        assert pk.internet_checksum(data) == o.checksum(data)


@given(st.binary(max_size=600))
@settings(max_examples=200, deadline=None)
def test_checksum_property(data):
    c = pk.internet_checksum(data)
    padded = data + (b"\x00" if len(data) % 2 else b"")
    assert o.ones_sum(padded + c.to_bytes(2, "big")) == 0xFFFF


def test_corrupted_frame_fails_checksum():
    f = bytearray(o.tcp_frame("10.0.0.1", "10.0.0.2", 1, 2, payload=b"abc"))
    assert pk.checksums_valid(bytes(f))
    f[-1] ^= 0xFF
    assert not pk.checksums_valid(bytes(f))
    assert not o.frame_checksums_ok(bytes(f))


def test_packet_to_bytes_passes_independent_verifier():
    p = pk.Packet(src="1.2.3.4", dst="5.6.7.8", proto=6, sport=1, dport=80, tcp_flags=pk.SYN,
                  tcp_options=bytes.fromhex("020405b4"), payload=b"hello")
    assert o.frame_checksums_ok(p.to_bytes())


def test_pcap_round_trip(tmp_path):
    pkts = [RawPacket(1_600_000_000_000_001, o.arp_frame()),
            RawPacket(1_600_000_000_500_000, o.tcp_frame("10.0.0.1", "10.0.0.2", 1, 2))]
    write_pcap(tmp_path / "a.pcap", pkts)
    assert read_pcap(tmp_path / "a.pcap") == pkts
    data = o.pcap_file([(1_600_000_000, 1, o.arp_frame()),
                        (1_600_000_000, 500_000, o.tcp_frame("10.0.0.1", "10.0.0.2", 1, 2))])
    assert pcap_bytes(pkts) == data


def test_big_endian_and_nanosecond_captures():
    f = o.udp_frame("10.0.0.1", "10.0.0.2", 1, 53)
    be = o.pcap_file([(5, 250, f)], big_endian=True)
    assert list(iter_pcap_bytes(be)) == [RawPacket(5_000_250, f)]
    ns = bytearray(o.pcap_file([(5, 250_999, f)]))
    ns[0:4] = struct.pack("<I", 0xA1B23C4D)
    assert list(iter_pcap_bytes(bytes(ns))) == [RawPacket(5_000_250, f)]


def test_empty_capture_has_no_records():
    data = o.pcap_file([])
    assert list(iter_pcap_bytes(data)) == []
    assert parse_packets(iter_pcap_bytes(data)).records == []


def test_bad_magic_and_truncation_report_offsets():
    with pytest.raises(PcapError) as e:
        list(iter_pcap_bytes(b"\x00" * 24))
    assert e.value.offset == 0
    with pytest.raises(PcapError):
        list(iter_pcap_bytes(b"\xd4\xc3"))
    good = o.pcap_file([(1, 0, o.arp_frame())])
    with pytest.raises(PcapError) as e:
        list(iter_pcap_bytes(good[:-3]))
    assert e.value.offset == 24
    with pytest.raises(PcapError) as e:
        list(iter_pcap_bytes(good + b"\x00" * 5))
    assert e.value.offset == len(good)


def test_unsupported_link_type():
    with pytest.raises(UnsupportedLinkType):
        list(iter_pcap_bytes(o.pcap_file([], linktype=101)))


def test_parse_skips_arp_and_ipv6_and_counts_them():
    v6 = o.ETH_HDR + b"\x86\xdd" + bytes(40)
    raws = [RawPacket(1, o.arp_frame()), RawPacket(2, v6), RawPacket(3, o.ETH_HDR + b"\x08\x00" + b"\x45"),
            RawPacket(4, o.tcp_frame("10.0.0.1", "10.0.0.2", 1, 2))]
    parsed = parse_packets(raws)
    assert len(parsed.records) == 1
    assert (parsed.skipped_non_ip, parsed.skipped_ipv6, parsed.skipped_malformed) == (1, 1, 1)


def test_ip_int_conversion():
    assert pk.ip_to_int("10.0.0.1") == 0x0A000001
    assert pk.int_to_ip(0xC0A80A05) == "192.168.10.5"
