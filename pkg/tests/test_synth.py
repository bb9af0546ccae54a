import numpy as np
import pytest

import oracles as o
from ddos_advtrain import packets as pk
from ddos_advtrain.flows import extract_samples, label_by_endpoints, parse_packets
from ddos_advtrain.pcap import pcap_bytes
from ddos_advtrain.synth import AttackSpec, BenignMix, TrafficScenario, synth_to_file, synthesize


def scenario(kind="syn_flood", seed=1, duration=6.0, **attack):
    return TrafficScenario(duration=duration, seed=seed, attack=AttackSpec(kind=kind, **dict(dict(rate=40.0), **attack)))


def test_same_seed_same_bytes():
    assert pcap_bytes(synthesize(scenario(seed=3))) == pcap_bytes(synthesize(scenario(seed=3)))
    assert pcap_bytes(synthesize(scenario(seed=3))) != pcap_bytes(synthesize(scenario(seed=4)))


def test_zero_duration_is_empty(tmp_path):
    assert synthesize(scenario(duration=0.0)) == []
    assert synth_to_file(scenario(duration=0.0), tmp_path / "e.pcap") == 0
    assert (tmp_path / "e.pcap").stat().st_size == 24


def test_packets_are_time_ordered_and_checksummed():
    for kind in ("syn_flood", "http_get_flood"):
        pkts = synthesize(scenario(kind))
        assert pkts
        assert all(a.ts_us <= b.ts_us for a, b in zip(pkts, pkts[1:]))
        assert all(o.frame_checksums_ok(p.frame) for p in pkts)


def test_single_source_pool_uses_distinct_ports():
    sc = scenario(src_pool=1, replies=False)
    syns = [pk.decode(p.frame) for p in synthesize(sc)]
    syns = [p for p in syns if p.src == sc.attacker_ips()[0]]
    assert len(syns) > 50
    assert len({p.sport for p in syns}) == len(syns)
    assert all(p.tcp_flags == pk.SYN for p in syns)


def test_http_flood_requests_and_flow_length():
    sc = scenario("http_get_flood", rate=10.0, duration=3.0)  # attack ends before the capture does
    sc.duration = 6.0
    pkts = synthesize(sc)
    att = set(sc.attacker_ips())
    reqs = [p for p in map(pk.decode, (r.frame for r in pkts)) if p.src in att and p.payload]
    assert reqs and all(p.payload.startswith(b"GET ") for p in reqs)
    assert all(p.dport == 80 for p in map(pk.decode, (r.frame for r in pkts)) if p.src in att)
    # one window spanning the capture, so no connection is cut at a window edge
    ds = label_by_endpoints(extract_samples(parse_packets(pkts).records, 60.0), sc.attacker_ips(),
                            [sc.attack.victim])
    attack_fl = ds.flow_length[ds.y == 1]
    assert len(attack_fl) > 10 and attack_fl.min() >= 4


def test_benign_only_scenario_has_both_directions():
    sc = TrafficScenario(duration=5.0, seed=2, benign=BenignMix(web_rate=3.0))
    pkts = [pk.decode(p.frame) for p in synthesize(sc)]
    servers = set(sc.benign.servers)
    assert any(p.src in servers for p in pkts) and any(p.dst in servers for p in pkts)


def test_scenario_validation_and_round_trip():
    sc = scenario()
    assert TrafficScenario.from_dict(sc.to_dict()) == sc
    with pytest.raises(ValueError):
        TrafficScenario.from_dict({"duration": -1})
    with pytest.raises(ValueError):
        TrafficScenario.from_dict({"attack": {"kind": "smurf"}})
    with pytest.raises(TypeError):
        TrafficScenario.from_dict({"attack": {"bogus": 1}})


def test_syn_rate_and_replied_flow_lengths():
    sc = scenario(rate=100.0, duration=1.0, src_pool=500, backlog=10_000)
    pkts = synthesize(sc)
    att = set(sc.attacker_ips())
    syns = [p for p in map(pk.decode, (r.frame for r in pkts)) if p.src in att]
    assert 70 <= len(syns) <= 130  # Poisson(100), beyond 3 sd
    assert all(p.tcp_flags & pk.SYN for p in syns)
    ds = label_by_endpoints(extract_samples(parse_packets(pkts).records), sc.attacker_ips(), [sc.attack.victim])
    assert set(ds.flow_length[ds.y == 1].tolist()) == {2}
    no_reply = synthesize(scenario(rate=100.0, duration=1.0, src_pool=500, replies=False))
    ds = label_by_endpoints(extract_samples(parse_packets(no_reply).records), sc.attacker_ips(), [sc.attack.victim])
    assert set(ds.flow_length[ds.y == 1].tolist()) == {1}


def test_web_flows_give_distinct_flow_keys():
    sc = TrafficScenario(duration=5.0, seed=4, benign=BenignMix(web_rate=2.0, dns_rate=0, icmp_rate=0,
                                                                 ssh_rate=0, failed_tcp_rate=0))
    pkts = synthesize(sc)
    syns = sum(1 for p in map(pk.decode, (r.frame for r in pkts)) if p.tcp_flags == pk.SYN)
    keys = {s.key for s in extract_samples(parse_packets(pkts).records)}
    assert syns >= 5 and len(keys) >= syns
