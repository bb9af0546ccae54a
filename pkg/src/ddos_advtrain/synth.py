"""Seeded synthesis of benign, SYN-flood and HTTP-GET-flood captures.

Benign traffic mixes web page fetches (HTTP and TLS), interactive SSH,
DNS lookups, ICMP echo and a trickle of failed TCP connection attempts.
All packets carry valid checksums and consistent length fields.

Scenario files are JSON objects mirroring :class:`TrafficScenario`::

    {"duration": 60, "seed": 1,
     "benign": {"web_rate": 6.0, "dns_rate": 3.0, ...},
     "attack": {"kind": "syn_flood", "rate": 150.0, "src_pool": 200,
                "victim": "192.168.10.5", "victim_port": 80}}
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import packets as pk
from .pcap import RawPacket, write_pcap

BASE_TIME_US = 1_600_000_000 * 1_000_000

# Linux-style SYN options: MSS 1460, SACK permitted, timestamps, window scale 7
SYN_OPTIONS = bytes.fromhex("020405b40402080a0000000000000000" "01030307")
TS_OPTIONS = bytes.fromhex("0101080a0000000000000000")
MSS = 1448


@dataclass
class BenignMix:
    clients: int = 40
    servers: tuple[str, ...] = ("192.168.10.5", "192.168.10.6", "192.168.10.7", "192.168.10.8")
    web_rate: float = 4.0  # new page-fetch connections per second
    ssh_rate: float = 0.1
    dns_rate: float = 2.0
    icmp_rate: float = 0.2
    failed_tcp_rate: float = 0.4
    rtt_mean: float = 0.04  # seconds
    think_mean: float = 0.6  # seconds between requests on a keep-alive connection
    server_delay_mean: float = 0.08
    requests_p: float = 0.45  # geometric parameter for requests per connection
    response_mu: float = 8.0  # log-normal response size (bytes)
    response_sigma: float = 1.3
    request_low: int = 180
    request_high: int = 700
    tls_share: float = 0.35

    def validate(self):
        for name in ("web_rate", "ssh_rate", "dns_rate", "icmp_rate", "failed_tcp_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"benign.{name} must be >= 0")
        if self.clients < 1 or not self.servers:
            raise ValueError("benign mix needs at least one client and one server")
        if self.rtt_mean <= 0:
            raise ValueError("benign.rtt_mean must be > 0")


@dataclass
class AttackSpec:
    kind: str = "syn_flood"  # or "http_get_flood"
    rate: float = 150.0  # SYNs per second, or GET connections per second
    src_pool: int = 200
    src_base: str = "172.16.0.1"
    victim: str = "192.168.10.5"
    victim_port: int = 80
    replies: bool = True
    backlog: int = 64  # half-open slots on the victim
    backlog_timeout: float = 1.0  # seconds a half-open slot stays occupied
    start: float = 0.0  # offset into the scenario
    duration: float | None = None
    lan_delay: float = 0.0008  # one-way delay attacker <-> victim
    response_size: int = 1180  # bytes of the victim's reply to GET /
    syn_window: int = 64240  # TCP window advertised in flood SYNs

    def validate(self):
        if self.kind not in ("syn_flood", "http_get_flood"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.rate <= 0:
            raise ValueError("attack.rate must be > 0")
        if self.src_pool < 1:
            raise ValueError("attack.src_pool must be >= 1")


@dataclass
class TrafficScenario:
    duration: float = 60.0
    seed: int = 0
    benign: BenignMix = field(default_factory=BenignMix)
    attack: AttackSpec | None = None

    def validate(self):
        if self.duration < 0:
            raise ValueError("duration must be >= 0")
        self.benign.validate()
        if self.attack is not None:
            self.attack.validate()

    def attacker_ips(self) -> list[str]:
        if self.attack is None:
            return []
        base = pk.ip_to_int(self.attack.src_base)
        return [pk.int_to_ip(base + i) for i in range(self.attack.src_pool)]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrafficScenario":
        d = dict(d)
        benign = d.pop("benign", None) or {}
        if "servers" in benign:
            benign = dict(benign, servers=tuple(benign["servers"]))
        attack = d.pop("attack", None)
        sc = cls(benign=BenignMix(**benign), attack=AttackSpec(**attack) if attack else None, **d)
        sc.validate()
        return sc

    @classmethod
    def from_file(cls, path) -> "TrafficScenario":
        return cls.from_dict(json.loads(Path(path).read_text()))


class _Emitter:
    """Collects packets with a per-emitter deterministic IP id sequence."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.out: list[RawPacket] = []

    def emit(self, t: float, pkt: pk.Packet) -> None:
        pkt.ip_id = int(self.rng.integers(0, 65536))
        self.out.append(RawPacket(BASE_TIME_US + int(round(t * 1e6)), pkt.to_bytes()))


def _client_ip(i: int) -> str:
    return pk.int_to_ip(pk.ip_to_int("10.1.0.10") + i)


class _TcpSession:
    """Builds one TCP conversation with consistent sequence/ack numbers."""

    def __init__(self, em: _Emitter, client: str, cport: int, server: str, sport: int,
                 owd: float, df_client: bool = True, client_win: int = 64240,
                 server_win: int = 65160, syn_options: bytes = SYN_OPTIONS,
                 data_options: bytes = TS_OPTIONS):
        self.em = em
        self.c = (client, cport)
        self.s = (server, sport)
        self.owd = owd
        self.df_client = df_client
        self.win = {True: client_win, False: server_win}
        self.syn_options = syn_options
        self.data_options = data_options
        rng = em.rng
        self.seq = {True: int(rng.integers(0, 2 ** 32)), False: int(rng.integers(0, 2 ** 32))}
        self.ack = {True: 0, False: 0}

    def _pkt(self, from_client: bool, flags: int, payload: bytes = b"", options: bytes | None = None):
        src, dst = (self.c, self.s) if from_client else (self.s, self.c)
        df = self.df_client if from_client else True
        return pk.Packet(src=src[0], dst=dst[0], proto=pk.PROTO_TCP, sport=src[1], dport=dst[1],
                         ip_flags=pk.IP_DF if df else 0, seq=self.seq[from_client],
                         ack=self.ack[from_client] if flags & pk.ACK else 0, tcp_flags=flags,
                         window=self.win[from_client], payload=payload,
                         tcp_options=self.data_options if options is None else options)

    def send(self, t: float, from_client: bool, flags: int, payload: bytes = b"",
             options: bytes | None = None) -> float:
        self.em.emit(t, self._pkt(from_client, flags, payload, options))
        consumed = len(payload) + (1 if flags & (pk.SYN | pk.FIN) else 0)
        self.seq[from_client] = (self.seq[from_client] + consumed) & 0xFFFFFFFF
        self.ack[not from_client] = self.seq[from_client]
        return t

    def handshake(self, t: float) -> float:
        self.send(t, True, pk.SYN, options=self.syn_options)
        t += 2 * self.owd
        self.send(t - self.owd, False, pk.SYN | pk.ACK, options=self.syn_options)
        self.send(t, True, pk.ACK)
        return t

    def transfer(self, t: float, from_client: bool, data: bytes, jitter) -> float:
        """Send ``data`` in MSS segments; the receiver acks every second segment."""
        segs = [data[i:i + MSS] for i in range(0, len(data), MSS)] or [b""]
        for i, seg in enumerate(segs):
            flags = pk.ACK | (pk.PSH if i == len(segs) - 1 else 0)
            self.send(t, from_client, flags, seg)
            if i % 2 == 1 or i == len(segs) - 1:
                self.send(t + self.owd, not from_client, pk.ACK)
            t += jitter()
        return t

    def close(self, t: float, from_client: bool = True) -> float:
        self.send(t, from_client, pk.FIN | pk.ACK)
        t += self.owd
        self.send(t, not from_client, pk.FIN | pk.ACK)
        t += self.owd
        self.send(t, from_client, pk.ACK)
        return t


def _http_request(rng, host: str, length: int, path: str | None = None) -> bytes:
    path = path or "/" + "".join(chr(c) for c in rng.integers(97, 123, size=int(rng.integers(1, 20))))
    head = f"GET {path} HTTP/1.1\r\nHost: {host}\r\n"
    pad = max(0, length - len(head) - 2)
    return (head + "X-Pad: " + "a" * max(0, pad - 9) + "\r\n\r\n").encode()[:max(length, len(head))]


def _http_response(rng, length: int) -> bytes:
    head = b"HTTP/1.1 200 OK\r\nContent-Type: text/html\r\n\r\n"
    body = rng.integers(32, 127, size=max(0, length - len(head)), dtype=np.uint8).tobytes()
    return head + body


def _poisson_times(rng, rate: float, start: float, end: float) -> np.ndarray:
    if rate <= 0 or end <= start:
        return np.zeros(0)
    n = rng.poisson(rate * (end - start))
    return np.sort(rng.uniform(start, end, size=n))


def synth_benign(scenario: TrafficScenario) -> list[RawPacket]:
    """Benign background traffic for ``scenario`` (attack spec ignored)."""
    scenario.validate()
    mix = scenario.benign
    rng = np.random.default_rng([scenario.seed, 1])
    em = _Emitter(rng)
    end = scenario.duration
    servers = list(mix.servers)
    port_counter = {}

    def next_port(client: str) -> int:
        port_counter[client] = port_counter.get(client, int(rng.integers(32768, 50000))) + 1
        return 32768 + (port_counter[client] - 32768) % 28000

    def owd():
        return float(rng.gamma(4.0, mix.rtt_mean / 8.0))

    for t0 in _poisson_times(rng, mix.web_rate, 0.0, end):
        client = _client_ip(int(rng.integers(mix.clients)))
        server = servers[int(rng.integers(len(servers)))]
        tls = rng.random() < mix.tls_share
        d = owd()
        sess = _TcpSession(em, client, next_port(client), server, 443 if tls else 80, d)
        t = sess.handshake(float(t0))
        n_req = int(rng.geometric(mix.requests_p))
        for r in range(n_req):
            req_len = int(rng.integers(mix.request_low, mix.request_high))
            resp_len = int(min(60000, max(200, rng.lognormal(mix.response_mu, mix.response_sigma))))
            if tls:
                req = b"\x17\x03\x03" + rng.bytes(req_len)
                resp = b"\x17\x03\x03" + rng.bytes(resp_len)
            else:
                req = _http_request(rng, server, req_len)
                resp = _http_response(rng, resp_len)
            t += 0.001
            sess.send(t, True, pk.ACK | pk.PSH, req)
            t += d + float(rng.exponential(mix.server_delay_mean))
            t = sess.transfer(t, False, resp, lambda: float(rng.exponential(0.002)))
            t += d
            if r < n_req - 1:
                t += float(rng.exponential(mix.think_mean))
        sess.close(t + float(rng.exponential(mix.think_mean)), from_client=bool(rng.random() < 0.6))

    for t0 in _poisson_times(rng, mix.ssh_rate, 0.0, end):
        client = _client_ip(int(rng.integers(mix.clients)))
        server = servers[int(rng.integers(len(servers)))]
        d = owd()
        sess = _TcpSession(em, client, next_port(client), server, 22, d)
        t = sess.handshake(float(t0))
        t = sess.transfer(t + 0.001, False, rng.bytes(int(rng.integers(20, 60))), lambda: 0.001)
        t = sess.transfer(t + d, True, rng.bytes(int(rng.integers(20, 60))), lambda: 0.001)
        for _ in range(int(rng.integers(10, 80))):
            t += float(rng.exponential(0.4))
            t = sess.transfer(t, True, rng.bytes(int(rng.choice([36, 52, 68]))), lambda: 0.001)
            t += d
            t = sess.transfer(t, False, rng.bytes(int(rng.integers(36, 400))), lambda: 0.001)
        sess.close(t + 0.2)

    for t0 in _poisson_times(rng, mix.dns_rate, 0.0, end):
        client = _client_ip(int(rng.integers(mix.clients)))
        resolver = "192.168.10.53"
        sport = next_port(client)
        q = rng.bytes(int(rng.integers(20, 60)))
        a = rng.bytes(int(rng.integers(40, 300)))
        d = owd()
        em.emit(float(t0), pk.Packet(src=client, dst=resolver, proto=pk.PROTO_UDP, sport=sport,
                                     dport=53, ip_flags=0, payload=q))
        em.emit(float(t0) + 2 * d + float(rng.exponential(0.01)),
                pk.Packet(src=resolver, dst=client, proto=pk.PROTO_UDP, sport=53, dport=sport,
                          ip_flags=0, payload=a))

    for t0 in _poisson_times(rng, mix.icmp_rate, 0.0, end):
        client = _client_ip(int(rng.integers(mix.clients)))
        server = servers[int(rng.integers(len(servers)))]
        ident = int(rng.integers(0, 65536))
        d = owd()
        for k in range(int(rng.integers(1, 6))):
            t = float(t0) + k
            rest = int(ident).to_bytes(2, "big") + (k + 1).to_bytes(2, "big")
            body = rng.bytes(56)
            em.emit(t, pk.Packet(src=client, dst=server, proto=pk.PROTO_ICMP, icmp_type=8,
                                 icmp_rest=rest, payload=body))
            em.emit(t + 2 * d, pk.Packet(src=server, dst=client, proto=pk.PROTO_ICMP, icmp_type=0,
                                         icmp_rest=rest, payload=body))

    for t0 in _poisson_times(rng, mix.failed_tcp_rate, 0.0, end):
        client = _client_ip(int(rng.integers(mix.clients)))
        server = servers[int(rng.integers(len(servers)))]
        d = owd()
        sess = _TcpSession(em, client, next_port(client), server, int(rng.choice([8080, 3306, 25])), d)
        if rng.random() < 0.5:
            sess.send(float(t0), True, pk.SYN, options=SYN_OPTIONS)
            sess.ack[False] = sess.seq[True]
            sess.send(float(t0) + 2 * d, False, pk.RST | pk.ACK, options=b"")
        else:
            # unanswered: initial SYN plus kernel retransmissions
            for k, back in enumerate((0.0, 1.0, 3.0)):
                sess.seq[True] = (sess.seq[True] - (1 if k else 0)) & 0xFFFFFFFF
                sess.send(float(t0) + back, True, pk.SYN, options=SYN_OPTIONS)

    return _finish(em.out, end)


def _finish(packets: list[RawPacket], end: float) -> list[RawPacket]:
    limit = BASE_TIME_US + int(round(end * 1e6))
    kept = [p for p in packets if p.ts_us < limit]
    kept.sort(key=lambda p: p.ts_us)
    return kept


def _attack_window(scenario: TrafficScenario) -> tuple[float, float]:
    atk = scenario.attack
    start = max(0.0, atk.start)
    end = scenario.duration if atk.duration is None else min(scenario.duration, start + atk.duration)
    return start, end


def synth_syn_flood(scenario: TrafficScenario) -> list[RawPacket]:
    """Spoofed SYN flood; the victim answers while its half-open backlog has room."""
    scenario.validate()
    atk = scenario.attack
    if atk is None or atk.kind != "syn_flood":
        raise ValueError("scenario attack kind must be syn_flood")
    rng = np.random.default_rng([scenario.seed, 2])
    em = _Emitter(rng)
    pool = scenario.attacker_ips()
    start, end = _attack_window(scenario)
    next_port = {ip: int(rng.integers(1024, 60000)) for ip in pool}
    half_open: list[float] = []  # expiry times of occupied backlog slots
    for t in _poisson_times(rng, atk.rate, start, end):
        t = float(t)
        src = pool[int(rng.integers(len(pool)))]
        sport = next_port[src]
        next_port[src] = 1024 + (sport - 1024 + 1) % 64000
        seq = int(rng.integers(0, 2 ** 32))
        em.emit(t, pk.Packet(src=src, dst=atk.victim, proto=pk.PROTO_TCP, sport=sport,
                             dport=atk.victim_port, ip_flags=0, seq=seq, tcp_flags=pk.SYN,
                             window=atk.syn_window, tcp_options=SYN_OPTIONS))
        half_open = [e for e in half_open if e > t]
        if atk.replies and len(half_open) < atk.backlog:
            half_open.append(t + atk.backlog_timeout)
            em.emit(t + atk.lan_delay, pk.Packet(
                src=atk.victim, dst=src, proto=pk.PROTO_TCP, sport=atk.victim_port, dport=sport,
                ip_flags=pk.IP_DF, seq=int(rng.integers(0, 2 ** 32)), ack=(seq + 1) & 0xFFFFFFFF,
                tcp_flags=pk.SYN | pk.ACK, window=65160, tcp_options=SYN_OPTIONS))
    return _finish(em.out, scenario.duration)


def synth_http_flood(scenario: TrafficScenario) -> list[RawPacket]:
    """Repeated GET / connections from many sources, at machine speed."""
    scenario.validate()
    atk = scenario.attack
    if atk is None or atk.kind != "http_get_flood":
        raise ValueError("scenario attack kind must be http_get_flood")
    mix = scenario.benign
    rng = np.random.default_rng([scenario.seed, 3])
    em = _Emitter(rng)
    pool = scenario.attacker_ips()
    start, end = _attack_window(scenario)
    next_port = {ip: int(rng.integers(1024, 60000)) for ip in pool}
    response = _http_response(rng, atk.response_size)
    for t0 in _poisson_times(rng, atk.rate, start, end):
        src = pool[int(rng.integers(len(pool)))]
        sport = next_port[src]
        next_port[src] = 1024 + (sport - 1024 + 1) % 64000
        d = atk.lan_delay * float(rng.uniform(0.5, 1.5))
        sess = _TcpSession(em, src, sport, atk.victim, atk.victim_port, d)
        t = sess.handshake(float(t0))
        req = _http_request(rng, atk.victim, int(rng.integers(mix.request_low, mix.request_high)), "/")
        t += 0.0002
        sess.send(t, True, pk.ACK | pk.PSH, req)
        t += d + 0.0005
        t = sess.transfer(t, False, response, lambda: 0.0001)
        t += d + 0.0002
        sess.close(t, from_client=True)
    return _finish(em.out, scenario.duration)


def synthesize(scenario: TrafficScenario) -> list[RawPacket]:
    """Benign background plus the scenario's attack, merged in time order."""
    out = synth_benign(scenario)
    if scenario.attack is not None:
        if scenario.attack.kind == "syn_flood":
            out = out + synth_syn_flood(scenario)
        else:
            out = out + synth_http_flood(scenario)
    out.sort(key=lambda p: p.ts_us)
    return out


def synth_to_file(scenario: TrafficScenario, path) -> int:
    pkts = synthesize(scenario)
    write_pcap(path, pkts)
    return len(pkts)
