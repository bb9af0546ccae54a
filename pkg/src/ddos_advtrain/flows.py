"""Capture parsing, bidirectional flow windows and fixed-shape samples."""

from __future__ import annotations

import hashlib
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import packets as pk
from .features import HIGHEST_LAYER, N_FEATURES, N_ROWS, PROTOCOL_BITS
from .pcap import RawPacket, iter_pcap

DATASET_VERSION = 1


@dataclass(frozen=True, slots=True)
class PacketRecord:
    ts_us: int
    src: int
    dst: int
    ip_flags: int
    ip_len: int
    proto: int
    sport: int = 0
    dport: int = 0
    tcp_flags: int = 0
    tcp_ack: int = 0
    tcp_win: int = 0
    tcp_len: int = 0
    udp_len: int = 0
    icmp_type: int = 0
    highest_layer: int = 0
    protocols: int = 0

    @property
    def time(self) -> float:
        return self.ts_us / 1e6


FlowKey = tuple  # (ip_lo, port_lo, ip_hi, port_hi, proto) with (ip, port) ordered


def flow_key(rec: PacketRecord) -> FlowKey:
    a, b = (rec.src, rec.sport), (rec.dst, rec.dport)
    lo, hi = (a, b) if a <= b else (b, a)
    return (lo[0], lo[1], hi[0], hi[1], rec.proto)


# Like a dissector with TCP reassembly: only segments that open an HTTP message
# or carry a TLS record header count as that layer; continuation data stays TCP.
_HTTP_STARTS = (b"GET ", b"POST ", b"HEAD ", b"PUT ", b"DELETE ", b"OPTIONS ", b"PATCH ",
                b"CONNECT ", b"TRACE ", b"HTTP/1.")


def _looks_like_tls(payload: bytes) -> bool:
    return len(payload) >= 5 and 0x14 <= payload[0] <= 0x17 and payload[1] == 0x03 and payload[2] <= 0x04


def _classify_layers(pkt: pk.Packet) -> tuple[int, int]:
    bits = PROTOCOL_BITS["IP"]
    highest = "other"
    ports = (pkt.sport, pkt.dport)
    if pkt.is_fragment:
        return HIGHEST_LAYER[highest], bits
    if pkt.proto == pk.PROTO_TCP:
        bits |= PROTOCOL_BITS["TCP"]
        highest = "TCP"
        if 80 in ports and pkt.payload.startswith(_HTTP_STARTS):
            bits |= PROTOCOL_BITS["HTTP"]
            highest = "HTTP"
        elif 443 in ports and _looks_like_tls(pkt.payload):
            bits |= PROTOCOL_BITS["TLS"]
            highest = "TLS"
    elif pkt.proto == pk.PROTO_UDP:
        bits |= PROTOCOL_BITS["UDP"]
        highest = "UDP"
        if 53 in ports:
            bits |= PROTOCOL_BITS["DNS"]
            highest = "DNS"
    elif pkt.proto == pk.PROTO_ICMP:
        bits |= PROTOCOL_BITS["ICMP"]
        highest = "ICMP"
    return HIGHEST_LAYER[highest], bits


def decode_record(raw: RawPacket) -> PacketRecord:
    """Decode one frame; raises ``packets.DecodeError`` for non-IPv4 or malformed frames."""
    pkt = pk.decode(raw.frame)
    highest, bits = _classify_layers(pkt)
    ip_len = len(raw.frame) - 14 - len(pkt.extra)
    rec = dict(ts_us=raw.ts_us, src=pk.ip_to_int(pkt.src), dst=pk.ip_to_int(pkt.dst),
               ip_flags=pkt.ip_flags, ip_len=ip_len, proto=pkt.proto,
               highest_layer=highest, protocols=bits)
    if not pkt.is_fragment:
        if pkt.proto == pk.PROTO_TCP:
            rec.update(sport=pkt.sport, dport=pkt.dport, tcp_flags=pkt.tcp_flags, tcp_ack=pkt.ack,
                       tcp_win=pkt.window, tcp_len=len(pkt.payload))
        elif pkt.proto == pk.PROTO_UDP:
            rec.update(sport=pkt.sport, dport=pkt.dport, udp_len=8 + len(pkt.payload))
        elif pkt.proto == pk.PROTO_ICMP:
            rec.update(icmp_type=pkt.icmp_type)
    return PacketRecord(**rec)


@dataclass
class CaptureParse:
    records: list[PacketRecord] = field(default_factory=list)
    skipped_non_ip: int = 0
    skipped_ipv6: int = 0
    skipped_malformed: int = 0


def parse_packets(raws: Iterable[RawPacket]) -> CaptureParse:
    out = CaptureParse()
    for raw in raws:
        try:
            etype = pk.ethertype(raw.frame)
        except pk.DecodeError:
            out.skipped_malformed += 1
            continue
        if etype == pk.ETH_IPV6:
            out.skipped_ipv6 += 1
            continue
        if etype != pk.ETH_IPV4:
            out.skipped_non_ip += 1
            continue
        try:
            out.records.append(decode_record(raw))
        except pk.DecodeError:
            out.skipped_malformed += 1
    return out


def parse_capture(path) -> CaptureParse:
    """Decode every IPv4 packet of a classic pcap file, in capture order."""
    return parse_packets(iter_pcap(path))


def featurize(rec: PacketRecord, window_start_us: int, ack_base: int | None = None) -> np.ndarray:
    """Raw (unnormalised) feature row for one packet.

    ``ack_base`` is the acknowledgment number the TCP Ack feature is relative
    to; packets without the ACK flag report 0.
    """
    ack = 0
    if rec.tcp_flags & pk.ACK:
        ack = (rec.tcp_ack - (rec.tcp_ack if ack_base is None else ack_base)) & 0xFFFFFFFF
    return np.array([
        (rec.ts_us - window_start_us) / 1e6,
        rec.ip_len,
        rec.highest_layer,
        rec.ip_flags,
        rec.protocols,
        rec.tcp_len,
        ack,
        rec.tcp_flags,
        rec.tcp_win,
        rec.udp_len,
        rec.icmp_type,
    ], dtype=np.float64)


@dataclass
class Sample:
    matrix: np.ndarray  # (N_ROWS, N_FEATURES) raw feature values, zero padded
    flow_length: int
    key: FlowKey
    window: int
    label: int = -1


def extract_samples(records: Sequence[PacketRecord], window_seconds: float = 10.0,
                    max_packets: int = N_ROWS, origin_us: int | None = None) -> list[Sample]:
    """One sample per (flow, tumbling window), rows in timestamp order.

    Windows are aligned to ``origin_us`` (default: the earliest timestamp).
    Flows longer than ``max_packets`` within a window are truncated; shorter
    ones are zero padded.
    """
    if window_seconds <= 0:
        raise ValueError("window_seconds must be positive")
    if max_packets < 1:
        raise ValueError("max_packets must be >= 1")
    if not records:
        return []
    ordered = sorted(records, key=lambda r: r.ts_us)  # stable: ties keep capture order
    origin = ordered[0].ts_us if origin_us is None else origin_us
    width = int(round(window_seconds * 1e6))
    groups: dict[tuple[int, FlowKey], list[PacketRecord]] = defaultdict(list)
    for rec in ordered:
        groups[((rec.ts_us - origin) // width, flow_key(rec))].append(rec)

    samples = []
    for (window, key) in sorted(groups):
        recs = groups[(window, key)]
        kept = recs[:max_packets]
        matrix = np.zeros((max_packets, N_FEATURES))
        start = kept[0].ts_us
        ack_base: dict[tuple[int, int], int] = {}
        for i, rec in enumerate(kept):
            direction = (rec.src, rec.sport)
            if rec.tcp_flags & pk.ACK and direction not in ack_base:
                ack_base[direction] = rec.tcp_ack
            matrix[i] = featurize(rec, start, ack_base.get(direction))
        samples.append(Sample(matrix, len(kept), key, int(window)))
    return samples


def label_samples(samples: Sequence[Sample], attackers: Iterable, victims: Iterable) -> list[Sample]:
    """Label 1 iff a sample's flow connects an attacker address with a victim address."""
    att = {_as_ip_int(a) for a in attackers}
    vic = {_as_ip_int(v) for v in victims}
    if not att:
        raise ValueError("attack labelling requested with an empty attacker set")
    if att & vic:
        raise ValueError("attacker and victim address sets overlap")
    out = []
    for s in samples:
        a, b = s.key[0], s.key[2]
        hit = (a in att and b in vic) or (b in att and a in vic)
        out.append(Sample(s.matrix, s.flow_length, s.key, s.window, int(hit)))
    return out


def _as_ip_int(ip) -> int:
    return ip if isinstance(ip, int) else pk.ip_to_int(ip)


@dataclass
class NormalizationProfile:
    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        self.minimum = np.asarray(self.minimum, dtype=np.float64)
        self.maximum = np.asarray(self.maximum, dtype=np.float64)
        if self.minimum.shape != (N_FEATURES,) or self.maximum.shape != (N_FEATURES,):
            raise ValueError(f"normalization profile needs {N_FEATURES} features, "
                             f"got {self.minimum.shape} / {self.maximum.shape}")
        if np.any(self.maximum < self.minimum):
            raise ValueError("normalization profile has max < min")

    @classmethod
    def fit(cls, X: np.ndarray, flow_length: np.ndarray) -> "NormalizationProfile":
        real = _real_rows(X, flow_length)
        if len(real) == 0:
            raise ValueError("cannot fit normalization on an empty dataset")
        return cls(real.min(axis=0), real.max(axis=0))

    def apply(self, X: np.ndarray, flow_length: np.ndarray) -> np.ndarray:
        if X.shape[-1] != N_FEATURES:
            raise ValueError(f"expected {N_FEATURES} features, got {X.shape[-1]}")
        span = self.maximum - self.minimum
        safe = np.where(span > 0, span, 1.0)
        out = np.where(span > 0, (X - self.minimum) / safe, 0.0)
        out = np.clip(out, 0.0, 1.0)
        return out * _row_mask(flow_length, X.shape[1])[..., None]

    def to_dict(self) -> dict:
        return {"min": self.minimum.tolist(), "max": self.maximum.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationProfile":
        return cls(d["min"], d["max"])


def _row_mask(flow_length: np.ndarray, n_rows: int) -> np.ndarray:
    return (np.arange(n_rows)[None, :] < np.asarray(flow_length)[:, None]).astype(np.float64)


def _real_rows(X: np.ndarray, flow_length: np.ndarray) -> np.ndarray:
    mask = _row_mask(flow_length, X.shape[1]).astype(bool)
    return X[mask]


@dataclass
class LabeledDataset:
    """Samples T with labels Y (1 = DDoS, 0 = benign)."""

    X: np.ndarray  # (n, N_ROWS, N_FEATURES)
    y: np.ndarray  # (n,)
    flow_length: np.ndarray  # (n,)
    keys: np.ndarray = None  # (n, 5) flow keys, -1 for synthetic samples
    window: np.ndarray = None  # (n,)
    profile: NormalizationProfile | None = None
    meta: dict = field(default_factory=dict)
    provenance: np.ndarray = None  # (n,) origin tag per sample, see augment.PROVENANCE

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        n = len(self.X)
        self.y = np.asarray(self.y, dtype=np.int64).reshape(n)
        self.flow_length = np.asarray(self.flow_length, dtype=np.int64).reshape(n)
        self.keys = np.full((n, 5), -1, dtype=np.int64) if self.keys is None \
            else np.asarray(self.keys, dtype=np.int64).reshape(n, 5)
        self.window = np.full(n, -1, dtype=np.int64) if self.window is None \
            else np.asarray(self.window, dtype=np.int64).reshape(n)
        self.provenance = np.full(n, "original", dtype="<U16") if self.provenance is None \
            else np.asarray(self.provenance, dtype="<U16").reshape(n)
        if self.X.ndim != 3 or self.X.shape[2] != N_FEATURES:
            raise ValueError(f"samples must have shape (n, rows, {N_FEATURES}), got {self.X.shape}")
        if not np.isin(self.y, (0, 1)).all():
            raise ValueError("labels must be binary")

    def __len__(self) -> int:
        return len(self.X)

    @property
    def normalized(self) -> bool:
        return self.profile is not None

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        return LabeledDataset(self.X[idx], self.y[idx], self.flow_length[idx], self.keys[idx],
                              self.window[idx], self.profile, dict(self.meta), self.provenance[idx])

    def counts(self) -> tuple[int, int]:
        return int((self.y == 0).sum()), int((self.y == 1).sum())

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.X, self.y, self.flow_length):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def samples_to_dataset(samples: Sequence[Sample], meta: dict | None = None) -> LabeledDataset:
    n_rows = samples[0].matrix.shape[0] if samples else N_ROWS
    if any(s.label not in (0, 1) for s in samples):
        raise ValueError("every sample needs a 0/1 label before building a dataset")
    X = np.stack([s.matrix for s in samples]) if samples else np.zeros((0, n_rows, N_FEATURES))
    return LabeledDataset(
        X=X,
        y=[s.label for s in samples],
        flow_length=[s.flow_length for s in samples],
        keys=np.array([s.key for s in samples], dtype=np.int64).reshape(-1, 5),
        window=[s.window for s in samples],
        meta=dict(meta or {}),
    )


def label_by_endpoints(samples: Sequence[Sample], attacker_ips, victim_ips,
                       meta: dict | None = None) -> LabeledDataset:
    return samples_to_dataset(label_samples(samples, attacker_ips, victim_ips), meta)


def fit_and_apply_normalization(ds: LabeledDataset,
                                profile: NormalizationProfile | None = None) -> LabeledDataset:
    """Min-max scale raw features to [0, 1].

    Without ``profile`` one is fitted on the real rows of ``ds`` (training
    time); otherwise the given profile is applied and values are clamped.
    """
    if ds.normalized:
        raise ValueError("dataset is already normalised")
    if profile is None:
        if len(ds) == 0:
            raise ValueError("cannot fit normalization on an empty dataset")
        profile = NormalizationProfile.fit(ds.X, ds.flow_length)
    X = profile.apply(ds.X, ds.flow_length)
    return LabeledDataset(X, ds.y, ds.flow_length, ds.keys, ds.window, profile, dict(ds.meta),
                          ds.provenance)


def save_dataset(path, ds: LabeledDataset) -> None:
    header = {
        "format_version": DATASET_VERSION,
        "kind": "labeled_dataset",
        "profile": ds.profile.to_dict() if ds.profile is not None else None,
        "meta": ds.meta,
    }
    arrays = dict(X=ds.X, y=ds.y, flow_length=ds.flow_length, keys=ds.keys, window=ds.window,
                  provenance=ds.provenance)
    arrays["__header__"] = np.frombuffer(json.dumps(header, sort_keys=True, default=str).encode(),
                                         dtype=np.uint8)
    with open(Path(path), "wb") as fh:
        np.savez(fh, **arrays)


def load_dataset(path) -> LabeledDataset:
    with np.load(Path(path), allow_pickle=False) as z:
        if "__header__" not in z.files:
            raise ValueError(f"{path}: not a dataset file (missing header)")
        header = json.loads(bytes(z["__header__"]).decode())
        if header.get("format_version") != DATASET_VERSION:
            raise ValueError(f"{path}: unsupported dataset version {header.get('format_version')}")
        profile = header.get("profile")
        return LabeledDataset(
            X=z["X"], y=z["y"], flow_length=z["flow_length"], keys=z["keys"], window=z["window"],
            profile=NormalizationProfile.from_dict(profile) if profile else None,
            meta=header.get("meta", {}), provenance=z["provenance"],
        )
