"""Problem-space perturbation of attack traffic in a capture.

Each perturbation rewrites only packets of attack flows (flows between an
attacker address and a victim address); everything else is passed through
byte for byte.  Rewritten packets get fresh lengths and checksums, and a SYN
stays a SYN.

Spec files are JSON::

    {"kinds": ["ip_flags", "tcp_len", "syn_replication"],
     "seed": 7,
     "attackers": {"base": "172.16.0.1", "count": 200},
     "victims": ["192.168.10.5"],
     "params": {"tcp_len": {"payload": [1, 500]},
                "syn_replication": {"copies": [1, 8], "delay": [0.01, 0.5]}}}

``attackers`` may also be a plain list of addresses.
"""

from __future__ import annotations

import copy
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import packets as pk
from .pcap import RawPacket

log = logging.getLogger(__name__)

KINDS = ("ip_flags", "tcp_len", "padding_replacement", "syn_replication", "delay", "fragmentation")

DEFAULT_PARAMS = {
    "ip_flags": {"p_df": 0.5},
    "tcp_len": {"payload": [1, 500]},
    "padding_replacement": {"count": [1, 8], "delay": [0.001, 0.1]},
    "syn_replication": {"copies": [1, 8], "delay": [0.01, 0.5]},
    "delay": {"gap": [0.05, 1.5]},
    "fragmentation": {"max_segment": 100},
}


class PerturbationError(ValueError):
    pass


@dataclass
class PerturbationSpec:
    kinds: list[str]
    attackers: list[str]
    victims: list[str]
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.kinds:
            raise PerturbationError("perturbation spec needs at least one kind")
        for k in self.kinds:
            if k not in KINDS:
                raise PerturbationError(f"unknown perturbation kind {k!r}; valid: {', '.join(KINDS)}")
        unknown = set(self.params) - set(KINDS)
        if unknown:
            raise PerturbationError(f"parameters given for unknown kinds: {sorted(unknown)}")
        if not self.attackers or not self.victims:
            raise PerturbationError("attack filter needs attacker and victim addresses")
        merged = copy.deepcopy(DEFAULT_PARAMS)
        for k, v in self.params.items():
            merged[k].update(v)
        self.params = merged
        self._validate_ranges()
        self._att = {pk.ip_to_int(a) for a in self.attackers}
        self._vic = {pk.ip_to_int(v) for v in self.victims}

    def _validate_ranges(self):
        p = self.params
        for kind, key, lo_min in (("tcp_len", "payload", 0), ("padding_replacement", "count", 0),
                                  ("padding_replacement", "delay", 0), ("syn_replication", "copies", 0),
                                  ("syn_replication", "delay", 0), ("delay", "gap", 0)):
            lo, hi = p[kind][key]
            if lo < lo_min or hi < lo:
                raise PerturbationError(f"{kind}.{key} must be an increasing range >= {lo_min}")
        if not 0.0 <= p["ip_flags"]["p_df"] <= 1.0:
            raise PerturbationError("ip_flags.p_df must be a probability")
        if p["fragmentation"]["max_segment"] < 1:
            raise PerturbationError("fragmentation.max_segment must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbationSpec":
        att = d.get("attackers", [])
        if isinstance(att, dict):
            base = pk.ip_to_int(att["base"])
            att = [pk.int_to_ip(base + i) for i in range(int(att["count"]))]
        return cls(kinds=list(d["kinds"]), attackers=list(att), victims=list(d.get("victims", [])),
                   seed=int(d.get("seed", 0)), params=d.get("params", {}))

    @classmethod
    def from_file(cls, path) -> "PerturbationSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        """Effective spec, defaults filled in."""
        return {"kinds": list(self.kinds), "attackers": list(self.attackers), "victims": list(self.victims),
                "seed": self.seed, "params": copy.deepcopy(self.params)}

    def rng(self, kind: str, position: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, KINDS.index(kind), position])

    def from_attacker(self, pkt: pk.Packet) -> bool:
        return pk.ip_to_int(pkt.src) in self._att and pk.ip_to_int(pkt.dst) in self._vic

    def in_attack_flow(self, pkt: pk.Packet) -> bool:
        s, d = pk.ip_to_int(pkt.src), pk.ip_to_int(pkt.dst)
        return (s in self._att and d in self._vic) or (d in self._att and s in self._vic)


@dataclass
class _Item:
    """A packet in flight: decoded view only for attack-flow packets."""

    ts_us: int
    frame: bytes
    pkt: pk.Packet | None = None
    dirty: bool = False
    new: bool = False

    def raw(self) -> RawPacket:
        if self.dirty:
            return RawPacket(self.ts_us, self.pkt.to_bytes())
        return RawPacket(self.ts_us, self.frame)


def _lift(packets: list[RawPacket], spec: PerturbationSpec) -> list[_Item]:
    items = []
    for p in packets:
        item = _Item(p.ts_us, p.frame)
        try:
            if pk.ethertype(p.frame) == pk.ETH_IPV4:
                decoded = pk.decode(p.frame)
                if spec.in_attack_flow(decoded):
                    item.pkt = decoded
        except pk.DecodeError:
            pass
        items.append(item)
    return items


def _is_attack_syn(item: _Item, spec: PerturbationSpec) -> bool:
    p = item.pkt
    return (p is not None and p.proto == pk.PROTO_TCP and not p.is_fragment
            and p.tcp_flags & pk.SYN and not p.tcp_flags & pk.ACK and spec.from_attacker(p))


def _uniform_int(rng, lo_hi) -> int:
    lo, hi = int(lo_hi[0]), int(lo_hi[1])
    return int(rng.integers(lo, hi + 1))


def _uniform(rng, lo_hi) -> float:
    lo, hi = float(lo_hi[0]), float(lo_hi[1])
    return lo if hi == lo else float(rng.uniform(lo, hi))


def _flow_of(p: pk.Packet) -> tuple:
    a, b = (pk.ip_to_int(p.src), p.sport), (pk.ip_to_int(p.dst), p.dport)
    return (min(a, b), max(a, b), p.proto)


def _ip_flags(items, spec, stats):
    rng = spec.rng("ip_flags", stats["_pos"])
    p_df = spec.params["ip_flags"]["p_df"]
    for it in items:
        if it.pkt is None or not spec.from_attacker(it.pkt):
            continue
        df = rng.random() < p_df
        it.pkt.ip_flags = (it.pkt.ip_flags & ~pk.IP_DF) | (pk.IP_DF if df else 0)
        it.dirty = True
        stats["ip_flags"] += 1
    return items


def _tcp_len(items, spec, stats):
    rng = spec.rng("tcp_len", stats["_pos"])
    rng_range = spec.params["tcp_len"]["payload"]
    for it in items:
        if not _is_attack_syn(it, spec):
            continue
        n = _uniform_int(rng, rng_range)
        room = pk.MAX_TCP_PAYLOAD - len(it.pkt.payload)
        if n > room:
            stats["tcp_len_clamped"] += 1
            n = max(room, 0)
        if n == 0:
            continue
        it.pkt.payload = it.pkt.payload + rng.bytes(n)
        it.dirty = True
        stats["tcp_len"] += 1
    return items


def _padding(items, spec, stats):
    rng = spec.rng("padding_replacement", stats["_pos"])
    prm = spec.params["padding_replacement"]
    out = []
    for it in items:
        out.append(it)
        if not _is_attack_syn(it, spec):
            continue
        k = _uniform_int(rng, prm["count"])
        t = it.ts_us
        syn = it.pkt
        for _ in range(k):
            t += max(1, int(round(_uniform(rng, prm["delay"]) * 1e6)))
            dummy = syn.copy(tcp_flags=pk.ACK, payload=b"", tcp_options=b"",
                             seq=(syn.seq + 1) & 0xFFFFFFFF, ack=int(rng.integers(0, 2 ** 32)),
                             ip_id=int(rng.integers(0, 65536)))
            out.append(_Item(t, b"", dummy, dirty=True, new=True))
            stats["padding_replacement"] += 1
    return out


def _replicate(items, spec, stats):
    rng = spec.rng("syn_replication", stats["_pos"])
    prm = spec.params["syn_replication"]
    out = []
    for it in items:
        out.append(it)
        if not _is_attack_syn(it, spec):
            continue
        t = it.ts_us
        for _ in range(_uniform_int(rng, prm["copies"])):
            t += max(1, int(round(_uniform(rng, prm["delay"]) * 1e6)))
            out.append(_Item(t, it.frame, it.pkt.copy(), dirty=it.dirty, new=True))
            stats["syn_replication"] += 1
    return out


def _delay(items, spec, stats):
    rng = spec.rng("delay", stats["_pos"])
    gap = spec.params["delay"]["gap"]
    by_flow = defaultdict(list)
    for it in items:
        if it.pkt is not None:
            by_flow[_flow_of(it.pkt)].append(it)
    for flow in sorted(by_flow):
        members = sorted(by_flow[flow], key=lambda i: i.ts_us)
        shift = 0
        for it in members[1:]:
            # the attacker delays its own packets; everything after follows
            if spec.from_attacker(it.pkt):
                shift += int(round(_uniform(rng, gap) * 1e6))
            if shift:
                it.ts_us += shift
                stats["delay"] += 1
    return items


def _fragment(items, spec, stats):
    mss = int(spec.params["fragmentation"]["max_segment"])
    out = []
    for it in items:
        p = it.pkt
        if (p is None or p.proto != pk.PROTO_TCP or p.is_fragment or not spec.from_attacker(p)
                or len(p.payload) <= mss):
            if p is not None and p.proto == pk.PROTO_TCP and not p.payload and spec.from_attacker(p):
                stats["fragmentation_skipped"] += 1
            out.append(it)
            continue
        chunks = [p.payload[i:i + mss] for i in range(0, len(p.payload), mss)]
        seq = p.seq
        for j, chunk in enumerate(chunks):
            last = j == len(chunks) - 1
            flags = p.tcp_flags if last else p.tcp_flags & ~(pk.PSH | pk.FIN)
            seg = p.copy(payload=chunk, seq=seq & 0xFFFFFFFF, tcp_flags=flags)
            out.append(_Item(it.ts_us + j, b"", seg, dirty=True, new=j > 0))
            seq += len(chunk)
        stats["fragmentation"] += len(chunks) - 1
    return out


_APPLY = {
    "ip_flags": _ip_flags,
    "tcp_len": _tcp_len,
    "padding_replacement": _padding,
    "syn_replication": _replicate,
    "delay": _delay,
    "fragmentation": _fragment,
}


def _settle(items: list[_Item]) -> list[_Item]:
    """Stable time sort; inserted packets colliding within their flow move forward by 1 us."""
    items = sorted(items, key=lambda i: i.ts_us)
    last_seen: dict[tuple, int] = {}
    for it in items:
        if it.pkt is None:
            continue
        f = _flow_of(it.pkt)
        if it.new and f in last_seen and it.ts_us <= last_seen[f]:
            it.ts_us = last_seen[f] + 1
        last_seen[f] = it.ts_us
    return sorted(items, key=lambda i: i.ts_us)


def apply_perturbation(kind: str, packets: list[RawPacket], spec: PerturbationSpec,
                       position: int = 0) -> tuple[list[RawPacket], Counter]:
    """Apply a single perturbation kind to a packet list."""
    stats = Counter(_pos=position)
    items = _settle(_APPLY[kind](_lift(packets, spec), spec, stats))
    del stats["_pos"]
    return [i.raw() for i in items], stats


def perturb_ip_flags(packets, spec):
    return apply_perturbation("ip_flags", packets, spec)[0]


def perturb_tcp_len(packets, spec):
    return apply_perturbation("tcp_len", packets, spec)[0]


def inject_padding_packets(packets, spec):
    return apply_perturbation("padding_replacement", packets, spec)[0]


def replicate_syn(packets, spec):
    return apply_perturbation("syn_replication", packets, spec)[0]


def inject_delays(packets, spec):
    return apply_perturbation("delay", packets, spec)[0]


def fragment_packets(packets, spec):
    return apply_perturbation("fragmentation", packets, spec)[0]


def compose(packets: list[RawPacket], spec: PerturbationSpec) -> tuple[list[RawPacket], Counter]:
    """Apply every kind in ``spec.kinds`` in order; returns packets and per-kind touch counts."""
    total = Counter()
    for pos, kind in enumerate(spec.kinds):
        packets, stats = apply_perturbation(kind, packets, spec, pos)
        total.update(stats)
        if kind == "fragmentation" and stats["fragmentation"] == 0:
            log.warning("fragmentation had no payload-bearing attack packets to split")
    for kind in spec.kinds:
        total.setdefault(kind, 0)
    return packets, total
