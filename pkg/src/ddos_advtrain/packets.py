"""Ethernet/IPv4/TCP/UDP/ICMP encoding, decoding and checksums."""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass, field, replace

ETH_IPV4 = 0x0800
ETH_IPV6 = 0x86DD
ETH_ARP = 0x0806

PROTO_ICMP = 1
PROTO_TCP = 6
PROTO_UDP = 17

IP_DF = 0b010
IP_MF = 0b001

# TCP flag bits (9-bit field incl. NS)
FIN, SYN, RST, PSH, ACK, URG, ECE, CWR, NS = (1 << i for i in range(9))

MAX_TCP_PAYLOAD = 1460

_ETH = struct.Struct("!6s6sH")
_IP = struct.Struct("!BBHHHBBH4s4s")
_TCP = struct.Struct("!HHIIHHHH")
_UDP = struct.Struct("!HHHH")


def ip_to_int(ip: str) -> int:
    return int(ipaddress.IPv4Address(ip))


def int_to_ip(value: int) -> str:
    return str(ipaddress.IPv4Address(value))


def internet_checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def _pseudo_header(src: bytes, dst: bytes, proto: int, length: int) -> bytes:
    return src + dst + struct.pack("!BBH", 0, proto, length)


@dataclass
class Packet:
    """Mutable view of one Ethernet/IPv4 frame.

    Lengths and checksums are derived on ``to_bytes``; everything else is kept
    as decoded so an unmodified packet re-encodes to identical bytes.
    """

    src: str
    dst: str
    proto: int
    ip_flags: int = IP_DF
    frag_offset: int = 0
    ip_id: int = 0
    ttl: int = 64
    tos: int = 0
    ip_options: bytes = b""
    sport: int = 0
    dport: int = 0
    seq: int = 0
    ack: int = 0
    tcp_flags: int = 0
    window: int = 0
    urgent: int = 0
    tcp_options: bytes = b""
    icmp_type: int = 0
    icmp_code: int = 0
    icmp_rest: bytes = b"\x00\x00\x00\x00"
    payload: bytes = b""
    eth_src: bytes = b"\x02\x00\x00\x00\x00\x01"
    eth_dst: bytes = b"\x02\x00\x00\x00\x00\x02"
    extra: bytes = field(default=b"", repr=False)  # link-layer trailer kept verbatim

    def copy(self, **changes) -> "Packet":
        return replace(self, **changes)

    @property
    def is_fragment(self) -> bool:
        return self.frag_offset != 0

    def transport_bytes(self) -> bytes:
        src, dst = ip_to_bytes(self.src), ip_to_bytes(self.dst)
        if self.is_fragment:
            return self.payload
        if self.proto == PROTO_TCP:
            opts = self.tcp_options
            if len(opts) % 4:
                opts += b"\x00" * (4 - len(opts) % 4)
            offset = (5 + len(opts) // 4)
            off_flags = (offset << 12) | (self.tcp_flags & 0x1FF)
            header = _TCP.pack(self.sport, self.dport, self.seq & 0xFFFFFFFF, self.ack & 0xFFFFFFFF,
                               off_flags, self.window, 0, self.urgent) + opts
            segment = header + self.payload
            csum = internet_checksum(_pseudo_header(src, dst, PROTO_TCP, len(segment)) + segment)
            return segment[:16] + struct.pack("!H", csum) + segment[18:]
        if self.proto == PROTO_UDP:
            length = 8 + len(self.payload)
            segment = _UDP.pack(self.sport, self.dport, length, 0) + self.payload
            csum = internet_checksum(_pseudo_header(src, dst, PROTO_UDP, length) + segment) or 0xFFFF
            return segment[:6] + struct.pack("!H", csum) + segment[8:]
        if self.proto == PROTO_ICMP:
            body = struct.pack("!BBH", self.icmp_type, self.icmp_code, 0) + self.icmp_rest + self.payload
            csum = internet_checksum(body)
            return body[:2] + struct.pack("!H", csum) + body[4:]
        return self.payload

    def to_bytes(self) -> bytes:
        transport = self.transport_bytes()
        opts = self.ip_options
        if len(opts) % 4:
            opts += b"\x00" * (4 - len(opts) % 4)
        ihl = 5 + len(opts) // 4
        total = ihl * 4 + len(transport)
        header = _IP.pack((4 << 4) | ihl, self.tos, total, self.ip_id & 0xFFFF,
                          ((self.ip_flags & 0x7) << 13) | (self.frag_offset & 0x1FFF),
                          self.ttl, self.proto, 0, ip_to_bytes(self.src), ip_to_bytes(self.dst)) + opts
        csum = internet_checksum(header)
        header = header[:10] + struct.pack("!H", csum) + header[12:]
        return _ETH.pack(self.eth_dst, self.eth_src, ETH_IPV4) + header + transport + self.extra


def ip_to_bytes(ip: str) -> bytes:
    return ipaddress.IPv4Address(ip).packed


class DecodeError(ValueError):
    pass


def ethertype(frame: bytes) -> int:
    if len(frame) < 14:
        raise DecodeError("frame shorter than an Ethernet header")
    return struct.unpack_from("!H", frame, 12)[0]


def decode(frame: bytes) -> Packet:
    """Decode an Ethernet/IPv4 frame into a ``Packet``."""
    if ethertype(frame) != ETH_IPV4:
        raise DecodeError("not an IPv4 frame")
    eth_dst, eth_src, _ = _ETH.unpack_from(frame, 0)
    if len(frame) < 34:
        raise DecodeError("truncated IPv4 header")
    vihl, tos, total, ip_id, flags_frag, ttl, proto, _, src, dst = _IP.unpack_from(frame, 14)
    ihl = (vihl & 0xF) * 4
    if vihl >> 4 != 4 or ihl < 20 or 14 + total > len(frame) or total < ihl:
        raise DecodeError("malformed IPv4 header")
    ip_end = 14 + total
    pkt = Packet(src=int_to_ip(int.from_bytes(src, "big")), dst=int_to_ip(int.from_bytes(dst, "big")),
                 proto=proto, ip_flags=flags_frag >> 13, frag_offset=flags_frag & 0x1FFF,
                 ip_id=ip_id, ttl=ttl, tos=tos, ip_options=frame[34:14 + ihl],
                 eth_src=eth_src, eth_dst=eth_dst, extra=frame[ip_end:])
    body = frame[14 + ihl:ip_end]
    if pkt.is_fragment:
        pkt.payload = body
        return pkt
    if proto == PROTO_TCP:
        if len(body) < 20:
            raise DecodeError("truncated TCP header")
        sport, dport, seq, ack, off_flags, window, _, urg = _TCP.unpack_from(body, 0)
        doff = (off_flags >> 12) * 4
        if doff < 20 or doff > len(body):
            raise DecodeError("bad TCP data offset")
        pkt.sport, pkt.dport, pkt.seq, pkt.ack = sport, dport, seq, ack
        pkt.tcp_flags = off_flags & 0x1FF
        pkt.window, pkt.urgent = window, urg
        pkt.tcp_options = body[20:doff]
        pkt.payload = body[doff:]
    elif proto == PROTO_UDP:
        if len(body) < 8:
            raise DecodeError("truncated UDP header")
        sport, dport, length, _ = _UDP.unpack_from(body, 0)
        pkt.sport, pkt.dport = sport, dport
        pkt.payload = body[8:length] if 8 <= length <= len(body) else body[8:]
    elif proto == PROTO_ICMP:
        if len(body) < 8:
            raise DecodeError("truncated ICMP header")
        pkt.icmp_type, pkt.icmp_code = body[0], body[1]
        pkt.icmp_rest = body[4:8]
        pkt.payload = body[8:]
    else:
        pkt.payload = body
    return pkt


def checksums_valid(frame: bytes) -> bool:
    """True when the IPv4 header and the transport checksum both verify."""
    try:
        if ethertype(frame) != ETH_IPV4:
            return False
        ihl = (frame[14] & 0xF) * 4
        total = struct.unpack_from("!H", frame, 16)[0]
        header = frame[14:14 + ihl]
        if internet_checksum(header) != 0:
            return False
        proto = frame[23]
        frag = struct.unpack_from("!H", frame, 20)[0] & 0x1FFF
        body = frame[14 + ihl:14 + total]
        if frag:
            return True
        src, dst = frame[26:30], frame[30:34]
        if proto == PROTO_TCP:
            return internet_checksum(_pseudo_header(src, dst, proto, len(body)) + body) == 0
        if proto == PROTO_UDP:
            if struct.unpack_from("!H", body, 6)[0] == 0:
                return True
            return internet_checksum(_pseudo_header(src, dst, proto, len(body)) + body) == 0
        if proto == PROTO_ICMP:
            return internet_checksum(body) == 0
        return True
    except (IndexError, struct.error, DecodeError):
        return False
