"""Per-packet feature layout shared by extraction, GAN, augmentation and detector."""

N_ROWS = 10

# Fixed column order of a sample matrix.
FEATURES = (
    "time",
    "packet_len",
    "highest_layer",
    "ip_flags",
    "protocols",
    "tcp_len",
    "tcp_ack",
    "tcp_flags",
    "tcp_win",
    "udp_len",
    "icmp_type",
)
N_FEATURES = len(FEATURES)
COLUMN = {name: i for i, name in enumerate(FEATURES)}

FLOW_LENGTH = "flow_length"
PLAN_FEATURES = FEATURES + (FLOW_LENGTH,)

DISPLAY_NAMES = {
    "time": "Time",
    "packet_len": "Packet Len",
    "highest_layer": "Highest Layer",
    "ip_flags": "IP Flags",
    "protocols": "Protocols",
    "tcp_len": "TCP Len",
    "tcp_ack": "TCP Ack",
    "tcp_flags": "TCP Flags",
    "tcp_win": "TCP Win Size",
    "udp_len": "UDP Len",
    "icmp_type": "ICMP Type",
    "flow_length": "Flow length",
}

# Highest-layer registry: deepest recognised layer wins.
HIGHEST_LAYER = {"other": 0, "ICMP": 1, "TCP": 6, "UDP": 17, "DNS": 53, "HTTP": 80, "TLS": 443}

# Protocols feature: bitmask over the layers present.
PROTOCOL_BITS = {"IP": 1, "TCP": 2, "UDP": 4, "ICMP": 8, "HTTP": 16, "DNS": 32, "TLS": 64}


def canonical_feature(name: str) -> str:
    """Map a column id, display name or loose spelling to the canonical feature id."""
    key = name.strip()
    if key in PLAN_FEATURES:
        return key
    folded = key.lower().replace(" ", "_").replace("-", "_")
    if folded in PLAN_FEATURES:
        return folded
    for fid, display in DISPLAY_NAMES.items():
        if display.lower() == key.lower():
            return fid
    aliases = {"tcp_win_size": "tcp_win", "flowlength": "flow_length", "padding": "flow_length"}
    if folded in aliases:
        return aliases[folded]
    raise KeyError(f"unknown feature {name!r}; valid: {', '.join(PLAN_FEATURES)}")
