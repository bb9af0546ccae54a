import numpy as np
import pytest

import oracles as o
from ddos_advtrain import autodiff as ad
from ddos_advtrain import detector as det
from ddos_advtrain.flows import LabeledDataset


def toy(nb=200, nd=200, seed=0):
    X, y, fl = o.separable_toy(nb, nd, seed)
    return LabeledDataset(X, y, fl)


@pytest.fixture(scope="module")
def model():
    return det.train(toy(), det.DetectorConfig(epochs=20, seed=1))


def f1(y, p):
    tp = np.sum((p == 1) & (y == 1))
    return 2 * tp / (2 * tp + np.sum((p == 1) & (y == 0)) + np.sum((p == 0) & (y == 1)))


def test_separable_toy_reaches_high_f1(model):
    assert model.meta["epochs_run"] <= 20
    test = toy(100, 100, seed=7)
    _, pred = det.classify(model, test.X)
    assert f1(test.y, pred) >= 0.99


def test_zero_epochs_returns_initialized_model():
    m = det.train(toy(20, 20), det.DetectorConfig(epochs=0, seed=3))
    ref = det.init_model(det.DetectorConfig(epochs=0, seed=3))
    for a, b in zip(m.net.parameters(), ref.net.parameters()):
        np.testing.assert_array_equal(a.data, b.data)


def test_same_seed_same_parameters():
    a = det.train(toy(40, 40), det.DetectorConfig(epochs=3, seed=5, kernels=8))
    b = det.train(toy(40, 40), det.DetectorConfig(epochs=3, seed=5, kernels=8))
    for pa, pb in zip(a.net.parameters(), b.net.parameters()):
        np.testing.assert_array_equal(pa.data, pb.data)


def test_score_at_threshold_counts_as_ddos(model):
    X = toy(3, 3, seed=2).X
    s = det.scores(model, X)
    m = det.DetectorModel(model.net, det.DetectorConfig(threshold=float(s[0])))
    _, labels = det.classify(m, X)
    assert labels[0] == 1
    assert np.array_equal(labels, (s >= s[0]).astype(int))


def test_batching_invariance_and_range(model):
    X = toy(30, 30, seed=4).X
    batch = det.scores(model, X)
    single = np.array([det.scores(model, x)[0] for x in X])
    np.testing.assert_array_equal(batch, single)
    np.testing.assert_array_equal(batch, det.scores(model, X, batch_size=7))
    assert batch.min() >= 0 and batch.max() <= 1


def test_all_zero_sample_has_a_score(model):
    s = det.scores(model, np.zeros((1, 10, 11)))
    assert np.isfinite(s).all() and 0 <= s[0] <= 1


def test_wrong_shape_and_single_class_errors(model):
    with pytest.raises(ad.ShapeError):
        det.classify(model, np.zeros((2, 10, 12)))
    X, _, fl = o.separable_toy(5, 0)
    with pytest.raises(ValueError):
        det.train(LabeledDataset(X, np.zeros(5, int), fl))
    with pytest.raises(ValueError):
        det.DetectorConfig(threshold=1.5).validate()


def test_stratified_split_keeps_both_classes():
    y = np.r_[np.zeros(50, int), np.ones(7, int)]
    tr, va = det.stratified_split(y, 0.1, np.random.default_rng(0))
    assert set(y[va]) == {0, 1}
    assert len(np.intersect1d(tr, va)) == 0 and len(tr) + len(va) == len(y)


def test_save_load_round_trip(model, tmp_path):
    det.save_detector(tmp_path / "m.npz", model, {"provenance": {"seed": 1}})
    back = det.load_detector(tmp_path / "m.npz")
    X = toy(5, 5, seed=9).X
    np.testing.assert_array_equal(det.scores(back, X), det.scores(model, X))
    assert back.meta["dataset_digest"] == model.meta["dataset_digest"]
    with pytest.raises(ValueError):
        from ddos_advtrain import gan
        gan.save_gan(tmp_path / "g.npz", gan.init_model(gan.GeneratorConfig()))
        det.load_detector(tmp_path / "g.npz")
