import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles as o
from ddos_advtrain import detector as det
from ddos_advtrain import gan
from ddos_advtrain.augment import (PerturbationPlan, apply_donors, balance, bfp_augment, fgsm_augment, fgsm_samples,
                                   gadot_augment)
from ddos_advtrain.features import COLUMN, PLAN_FEATURES
from ddos_advtrain.flows import LabeledDataset

G = gan.init_model(gan.GeneratorConfig(seed=3))


def toy(n_benign=6, n_ddos=14, seed=0):
    X, y, fl = o.separable_toy(n_benign, n_ddos, seed)
    return LabeledDataset(X, y, fl)


def fake_batches(seed):
    return lambda k, n: gan.generate(G, n, seed=[seed, k])


@pytest.mark.parametrize("n_benign,n_ddos", [(6, 14), (10, 10), (14, 6), (1, 19)])
def test_gadot_matches_literal_algorithm(n_benign, n_ddos):
    T = toy(n_benign, n_ddos)
    plan = PerturbationPlan.full()
    assert len(plan.features) == 12
    out = gadot_augment(T, plan, G, seed=5)
    X, Y, L = o.algorithm1(T.X, T.y, T.flow_length, list(plan.features), fake_batches(5))
    n = len(X)
    np.testing.assert_array_equal(out.X[:n], X)
    np.testing.assert_array_equal(out.y[:n], Y)
    np.testing.assert_array_equal(out.flow_length[:n], L)
    # tail: duplicated benign samples only, and the classes end up equal
    assert np.all(out.y[n:] == 0) and np.all(out.provenance[n:] == "duplicate-benign")
    assert out.counts() == (13 * max(n_benign, n_ddos), 13 * n_ddos)
    for x in out.X[n:]:
        assert any(np.array_equal(x, b) for b in T.X[T.y == 0])


def test_sizes_for_balanced_hundred():
    T = toy(50, 50)
    out = gadot_augment(T, PerturbationPlan.full(), G, seed=0)
    assert len(out) == 1300 and out.counts() == (650, 650)


def test_benign_never_modified_and_originals_verbatim():
    T = toy(8, 12)
    for out in (gadot_augment(T, PerturbationPlan.full(), G, seed=1), bfp_augment(T, PerturbationPlan.full(), seed=1)):
        np.testing.assert_array_equal(out.X[:len(T)], T.X)
        benign_rows = out.X[out.y == 0]
        assert all(any(np.array_equal(b, t) for t in T.X[T.y == 0]) for b in benign_rows)


@pytest.mark.parametrize("feature", [f for f in PLAN_FEATURES if f != "flow_length"])
def test_column_isolation(feature):
    T = toy(5, 15, seed=2)
    out = gadot_augment(T, PerturbationPlan((feature,)), G, seed=2)
    ddos = np.flatnonzero(T.y == 1)
    pert = out.X[len(T):][ddos]
    diff = pert != T.X[ddos]
    cols = np.flatnonzero(diff.any(axis=(0, 1)))
    assert cols.tolist() == [COLUMN[feature]]
    for d, fl in zip(diff, T.flow_length[ddos]):
        assert not d[fl:].any()


def test_tcp_len_column_is_index_five():
    assert COLUMN["tcp_len"] == 5


def test_flow_length_fill_gadot():
    T = toy(5, 15, seed=4)
    out = gadot_augment(T, PerturbationPlan(("flow_length",)), G, seed=4)
    pert = out.subset(np.arange(len(T), 2 * len(T)))
    assert np.all(pert.flow_length[pert.y == 1] == 10)
    assert np.all(np.abs(pert.X[pert.y == 1]).sum(axis=2) > 0)
    # the real rows are untouched
    for x, t, fl in zip(pert.X[pert.y == 1], T.X[T.y == 1], T.flow_length[T.y == 1]):
        np.testing.assert_array_equal(x[:fl], t[:fl])


def test_bfp_donor_values_come_from_real_benign_samples():
    T = toy(6, 14, seed=5)
    out = bfp_augment(T, PerturbationPlan(("packet_len",)), seed=9)
    pert = out.X[len(T):2 * len(T)][T.y == 1]
    c = COLUMN["packet_len"]
    benign_vals = set(T.X[T.y == 0][:, :, c].ravel().tolist())
    for x, fl in zip(pert, T.flow_length[T.y == 1]):
        assert set(x[:fl, c].tolist()) <= benign_vals
    assert len(out) == len(gadot_augment(T, PerturbationPlan(("packet_len",)), G))
    again = bfp_augment(T, PerturbationPlan(("packet_len",)), seed=9)
    np.testing.assert_array_equal(again.X, out.X)


def test_bfp_flow_length_capped_at_donor_length():
    T = toy(6, 14, seed=6)
    out = bfp_augment(T, PerturbationPlan(("flow_length",)), seed=1)
    pert = out.subset(np.arange(len(T), 2 * len(T)))
    assert np.all(pert.flow_length[pert.y == 1] >= T.flow_length[T.y == 1])
    assert np.all(pert.flow_length[pert.y == 1] >= 8)  # benign donors are 8-10 rows long


def test_balance_rules():
    T = toy(10, 30)
    b = balance(T, seed=0)
    assert b.counts() == (30, 30)
    assert np.all(b.provenance[40:] == "duplicate-benign")
    assert balance(toy(10, 10)) is not None and len(balance(toy(10, 10))) == 20
    with pytest.raises(ValueError):
        balance(LabeledDataset(np.zeros((2, 10, 11)), [1, 1], [1, 1]))
    with pytest.raises(ValueError):
        bfp_augment(LabeledDataset(np.zeros((2, 10, 11)), [1, 1], [1, 1]), PerturbationPlan.full())


def test_plan_validation():
    with pytest.raises(ValueError):
        PerturbationPlan(())
    with pytest.raises(ValueError):
        PerturbationPlan(("tcp_len", "tcp_len"))
    with pytest.raises(KeyError):
        PerturbationPlan(("colour",))
    assert PerturbationPlan.parse("all") == PerturbationPlan.full()


def test_apply_donors_count_mismatch():
    T = toy(2, 3)
    with pytest.raises(ValueError):
        apply_donors(T, "tcp_len", np.zeros((2, 10, 11)))


@pytest.fixture(scope="module")
def toy_detector():
    X, y, fl = o.separable_toy(150, 150, seed=1)
    return det.train(LabeledDataset(X, y, fl), det.DetectorConfig(epochs=15, kernels=16, seed=0))


def test_fgsm_contract(toy_detector):
    X, y, fl = o.separable_toy(0, 60, seed=8)
    np.testing.assert_array_equal(fgsm_samples(X, toy_detector, 0.0), X)
    adv = fgsm_samples(X, toy_detector, 0.1)
    assert np.abs(adv - X).max() <= 0.1 + 1e-12
    assert adv.min() >= 0 and adv.max() <= 1
    assert det.scores(toy_detector, adv).mean() < det.scores(toy_detector, X).mean()
    with pytest.raises(ValueError):
        fgsm_samples(X, toy_detector, -0.1)


def test_fgsm_augment_shape_and_balance(toy_detector):
    T = toy(10, 20, seed=3)
    out = fgsm_augment(T, toy_detector, 0.1)
    assert out.counts() == (40, 40)
    assert np.sum(out.provenance == "fgsm") == 20
    real = np.arange(10)[None, :] < out.flow_length[:, None]
    assert np.all(out.X[~real] == 0)  # flow_length covers every perturbed row


def test_gadot_is_independent_of_detector_training(toy_detector):
    T = toy(6, 14)
    a = gadot_augment(T, PerturbationPlan.full(), G, seed=7)
    X, y, fl = o.separable_toy(50, 50, seed=99)
    det.train(LabeledDataset(X, y, fl), det.DetectorConfig(epochs=2, kernels=8, seed=5))
    b = gadot_augment(T, PerturbationPlan.full(), G, seed=7)
    assert a.digest() == b.digest()
    assert np.array_equal(a.provenance, b.provenance)


@given(st.integers(1, 8), st.integers(1, 12), st.integers(0, 1000),
       st.lists(st.sampled_from(PLAN_FEATURES), min_size=1, max_size=4, unique=True))
@settings(max_examples=30, deadline=None)
def test_balance_and_label_purity_property(n_benign, n_ddos, seed, feats):
    T = toy(n_benign, n_ddos, seed=seed)
    for out in (gadot_augment(T, PerturbationPlan(tuple(feats)), G, seed=seed),
                bfp_augment(T, PerturbationPlan(tuple(feats)), seed=seed)):
        b, d = out.counts()
        assert b == d == n_ddos * (1 + len(feats)) or (b == n_benign * (1 + len(feats)) and b >= d)
        benign = out.X[out.y == 0]
        assert all(any(np.array_equal(x, t) for t in T.X[T.y == 0]) for x in benign)
        assert out.X.min() >= 0 and out.X.max() <= 1
