import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles as o
from ddos_advtrain import flows as fl
from ddos_advtrain.features import COLUMN, HIGHEST_LAYER, PROTOCOL_BITS
from ddos_advtrain.pcap import RawPacket


def recs_of(frames_with_times):
    return fl.parse_packets([RawPacket(t, f) for t, f in frames_with_times]).records


def test_extractor_matches_naive_reference_on_20_captures():
    rng = np.random.default_rng(2024)
    caps = [o.random_capture(rng, int(rng.integers(1, 51))) for _ in range(20)]
    assert o.extractor_mismatches(caps) == []


def test_extractor_matches_reference_with_short_windows_and_truncation():
    rng = np.random.default_rng(5)
    caps = [o.random_capture(rng, 50) for _ in range(5)]
    assert o.extractor_mismatches(caps, window_s=1.0, max_packets=4) == []


def test_syn_row_features():
    r = recs_of([(0, o.tcp_frame("10.0.0.1", "10.0.0.2", 1234, 80, flags=0x02, window=8192, ip_flags=0))])[0]
    row = fl.featurize(r, 0)
    assert row[COLUMN["tcp_flags"]] == 2
    assert row[COLUMN["packet_len"]] == 40
    assert row[COLUMN["highest_layer"]] == HIGHEST_LAYER["TCP"]
    assert row[COLUMN["protocols"]] == PROTOCOL_BITS["IP"] | PROTOCOL_BITS["TCP"]
    assert row[COLUMN["tcp_win"]] == 8192
    assert row[COLUMN["ip_flags"]] == 0


def test_dns_row_features():
    r = recs_of([(0, o.udp_frame("10.0.0.1", "8.8.8.8", 5000, 53, bytes(64)))])[0]
    row = fl.featurize(r, 0)
    assert row[COLUMN["udp_len"]] == 72
    assert row[COLUMN["packet_len"]] == 92
    assert row[COLUMN["highest_layer"]] == HIGHEST_LAYER["DNS"]
    assert row[COLUMN["protocols"]] == 1 | 4 | 32
    assert row[COLUMN["tcp_len"]] == 0


def test_http_needs_request_content_not_just_port():
    get = recs_of([(0, o.tcp_frame("10.0.0.1", "10.0.0.2", 1, 80, flags=0x18, payload=b"GET / HTTP/1.1\r\n"))])[0]
    junk = recs_of([(0, o.tcp_frame("10.0.0.1", "10.0.0.2", 1, 80, flags=0x02, payload=b"\x8a\x01zz"))])[0]
    assert get.highest_layer == 80 and get.protocols & 16
    assert junk.highest_layer == 6 and not junk.protocols & 16


def test_icmp_row():
    r = recs_of([(0, o.icmp_frame("10.0.0.1", "10.0.0.2", 8, b"abcd"))])[0]
    row = fl.featurize(r, 0)
    assert row[COLUMN["icmp_type"]] == 8 and row[COLUMN["highest_layer"]] == 1
    assert row[COLUMN["protocols"]] == 1 | 8


def test_windows_split_and_rows_are_relative_to_flow_start():
    a, b = "10.0.0.1", "10.0.0.2"
    recs = recs_of([(5_000_000, o.tcp_frame(a, b, 1, 80)), (9_000_000, o.tcp_frame(b, a, 80, 1, flags=0x12)),
                    (15_000_000, o.tcp_frame(a, b, 1, 80, flags=0x10))])
    s = fl.extract_samples(recs, 10.0)
    # windows aligned to the first packet: [5, 15) and [15, 25)
    assert [x.window for x in s] == [0, 1]
    assert [x.flow_length for x in s] == [2, 1]
    assert s[0].matrix[1, COLUMN["time"]] == pytest.approx(4.0)
    assert s[1].matrix[0, COLUMN["time"]] == 0.0
    assert np.all(s[0].matrix[2:] == 0)


def test_bidirectional_packets_share_a_flow_and_truncate_at_ten():
    a, b = "10.0.0.1", "10.0.0.2"
    frames = [(i * 1000, o.tcp_frame(a, b, 1, 80) if i % 2 else o.tcp_frame(b, a, 80, 1)) for i in range(14)]
    s = fl.extract_samples(recs_of(frames))
    assert len(s) == 1 and s[0].flow_length == 10
    assert s[0].matrix[9, COLUMN["time"]] == pytest.approx(0.009)


def test_ack_relative_per_direction():
    a, b = "10.0.0.1", "10.0.0.2"
    recs = recs_of([(0, o.tcp_frame(a, b, 1, 80, flags=0x02, ack=555)),
                    (1, o.tcp_frame(b, a, 80, 1, flags=0x12, ack=1001)),
                    (2, o.tcp_frame(a, b, 1, 80, flags=0x10, ack=7000)),
                    (3, o.tcp_frame(a, b, 1, 80, flags=0x10, ack=7500)),
                    (4, o.tcp_frame(b, a, 80, 1, flags=0x10, ack=1101))])
    m = fl.extract_samples(recs)[0].matrix
    assert list(m[:5, COLUMN["tcp_ack"]]) == [0, 0, 0, 500, 100]


def test_invalid_extraction_arguments():
    with pytest.raises(ValueError):
        fl.extract_samples([], 0)
    with pytest.raises(ValueError):
        fl.extract_samples([], 10, 0)
    assert fl.extract_samples([]) == []


frame_specs = st.lists(st.tuples(st.integers(0, 30_000_000), st.sampled_from([0, 1, 2]),
                                 st.sampled_from([0x02, 0x10, 0x12])), min_size=1, max_size=25)


@given(frame_specs, st.randoms(use_true_random=False))
@settings(max_examples=50, deadline=None)
def test_extraction_ignores_capture_order_of_distinct_timestamps(spec, rnd):
    hosts = ["10.0.0.1", "10.0.0.2", "10.0.0.3"]
    seen, frames = set(), []
    for t, h, flags in spec:
        if t in seen:
            continue
        seen.add(t)
        frames.append((t, o.tcp_frame(hosts[h], "10.0.0.9", 1000 + h, 80, flags=flags, ack=t)))
    shuffled = frames[:]
    rnd.shuffle(shuffled)
    a = fl.extract_samples(recs_of(frames))
    b = fl.extract_samples(recs_of(shuffled))
    assert [(x.key, x.window, x.flow_length) for x in a] == [(x.key, x.window, x.flow_length) for x in b]
    assert all(np.array_equal(x.matrix, y.matrix) for x, y in zip(a, b))


def _toy_samples():
    a, v, c = "172.16.0.1", "192.168.10.5", "10.0.0.7"
    recs = recs_of([(0, o.tcp_frame(a, v, 1, 80)), (1, o.tcp_frame(c, v, 2, 80, window=100)),
                    (2, o.tcp_frame(v, a, 80, 1, flags=0x12))])
    return fl.extract_samples(recs)


def test_labelling_by_endpoints():
    ds = fl.label_by_endpoints(_toy_samples(), ["172.16.0.1"], ["192.168.10.5"])
    assert sorted(ds.y.tolist()) == [0, 1]
    assert ds.counts() == (1, 1)
    with pytest.raises(ValueError):
        fl.label_samples(_toy_samples(), [], ["192.168.10.5"])
    with pytest.raises(ValueError):
        fl.label_samples(_toy_samples(), ["1.1.1.1"], ["1.1.1.1"])


def test_normalization_examples():
    X = np.zeros((2, 10, 11))
    X[0, 0] = 1.0
    X[0, 1] = 3.0
    X[1, 0] = 5.0
    X[1, 1, 0] = 99.0  # padding row of a length-1 sample: ignored by the fit
    ds = fl.LabeledDataset(X, [0, 1], [2, 1])
    n = fl.fit_and_apply_normalization(ds)
    np.testing.assert_allclose(n.profile.minimum, 1.0)
    np.testing.assert_allclose(n.profile.maximum, 5.0)
    np.testing.assert_allclose(n.X[0, 0], 0.0)
    np.testing.assert_allclose(n.X[0, 1], 0.5)
    np.testing.assert_allclose(n.X[1, 0], 1.0)
    assert np.all(n.X[1, 1:] == 0) and np.all(n.X[0, 2:] == 0)
    # unseen values clamp; constant columns map to zero
    prof = fl.NormalizationProfile(np.zeros(11), np.r_[np.ones(10), 0.0])
    Y = prof.apply(np.full((1, 10, 11), 7.0), np.array([10]))
    assert np.all(Y[..., :10] == 1.0) and np.all(Y[..., 10] == 0.0)
    with pytest.raises(ValueError):
        fl.fit_and_apply_normalization(n)


@given(st.lists(st.floats(-1e6, 1e6), min_size=11, max_size=11), st.integers(1, 10))
@settings(max_examples=50, deadline=None)
def test_normalized_values_stay_in_unit_range(vals, length):
    prof = fl.NormalizationProfile(np.full(11, -10.0), np.full(11, 10.0))
    X = np.tile(np.asarray(vals), (1, 10, 1))
    Y = prof.apply(X, np.array([length]))
    assert Y.min() >= 0 and Y.max() <= 1
    assert np.all(Y[0, length:] == 0)


def test_dataset_save_load_round_trip(tmp_path):
    ds = fl.fit_and_apply_normalization(fl.label_by_endpoints(_toy_samples(), ["172.16.0.1"], ["192.168.10.5"],
                                                              meta={"note": "x"}))
    fl.save_dataset(tmp_path / "d.npz", ds)
    back = fl.load_dataset(tmp_path / "d.npz")
    assert back.digest() == ds.digest()
    assert back.meta == {"note": "x"}
    np.testing.assert_array_equal(back.profile.maximum, ds.profile.maximum)
    np.testing.assert_array_equal(back.keys, ds.keys)


def test_dataset_rejects_bad_shapes_and_labels():
    with pytest.raises(ValueError):
        fl.LabeledDataset(np.zeros((1, 10, 5)), [0], [1])
    with pytest.raises(ValueError):
        fl.LabeledDataset(np.zeros((1, 10, 11)), [2], [1])
