"""Classic libpcap container: reading and writing raw frames."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

LINKTYPE_ETHERNET = 1
MAGIC_US = 0xA1B2C3D4
MAGIC_NS = 0xA1B23C4D
SNAPLEN = 65535


class PcapError(ValueError):
    """Malformed capture data; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class UnsupportedLinkType(PcapError):
    pass


@dataclass(frozen=True)
class RawPacket:
    ts_us: int  # capture time in integer microseconds
    frame: bytes

    @property
    def time(self) -> float:
        return self.ts_us / 1e6


def iter_pcap(path) -> Iterator[RawPacket]:
    data = Path(path).read_bytes()
    yield from iter_pcap_bytes(data)


def iter_pcap_bytes(data: bytes) -> Iterator[RawPacket]:
    if len(data) < 24:
        raise PcapError("truncated global header", len(data))
    magic_le = struct.unpack("<I", data[:4])[0]
    if magic_le in (MAGIC_US, MAGIC_NS):
        endian = "<"
        magic = magic_le
    else:
        magic_be = struct.unpack(">I", data[:4])[0]
        if magic_be not in (MAGIC_US, MAGIC_NS):
            raise PcapError(f"bad magic number 0x{magic_le:08x}", 0)
        endian = ">"
        magic = magic_be
    nano = magic == MAGIC_NS
    _, _, _, _, _, linktype = struct.unpack(endian + "HHiIII", data[4:24])
    if linktype != LINKTYPE_ETHERNET:
        raise UnsupportedLinkType(f"unsupported link type {linktype}", 20)
    rec = struct.Struct(endian + "IIII")
    offset = 24
    while offset < len(data):
        if offset + 16 > len(data):
            raise PcapError("truncated record header", offset)
        sec, frac, incl, _orig = rec.unpack_from(data, offset)
        start = offset + 16
        if start + incl > len(data):
            raise PcapError(f"truncated record body ({incl} bytes announced)", offset)
        us = frac // 1000 if nano else frac
        yield RawPacket(sec * 1_000_000 + us, bytes(data[start:start + incl]))
        offset = start + incl


def read_pcap(path) -> list[RawPacket]:
    return list(iter_pcap(path))


def pcap_bytes(packets: Iterable[RawPacket]) -> bytes:
    out = [struct.pack("<IHHiIII", MAGIC_US, 2, 4, 0, 0, SNAPLEN, LINKTYPE_ETHERNET)]
    for p in packets:
        sec, us = divmod(p.ts_us, 1_000_000)
        out.append(struct.pack("<IIII", sec, us, len(p.frame), len(p.frame)))
        out.append(p.frame)
    return b"".join(out)


def write_pcap(path, packets: Iterable[RawPacket]) -> None:
    Path(path).write_bytes(pcap_bytes(packets))
