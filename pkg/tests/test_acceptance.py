"""Acceptance criteria 1-10 at their stated tolerances.

Criteria 5-9 share one desk-scale run of both experiments (seed 0); it takes
several minutes on one core.
"""

import time

import numpy as np
import pytest

import gradchecks
import oracles as o
from ddos_advtrain import detector as det
from ddos_advtrain import gan
from ddos_advtrain import packets as pk
from ddos_advtrain import pipeline as pl
from ddos_advtrain.augment import PerturbationPlan, fgsm_samples, gadot_augment
from ddos_advtrain.cli import main
from ddos_advtrain.flows import LabeledDataset
from ddos_advtrain.synth import synthesize

SEED = 0
FNR_RISE = 0.20
GADOT_FNR = 0.05
F1_DROP = 0.02
BFP_GAP = 0.05


def test_criterion_1_gradient_checks():
    t0 = time.perf_counter()
    worst = {}
    for name in sorted(gradchecks.CASES):
        worst[name] = max(gradchecks.op_trial(name, np.random.default_rng(s)) for s in range(100))
    for kind in gradchecks.LAYER_KINDS:
        worst[kind] = max(gradchecks.layer_trial(kind, np.random.default_rng(s)) for s in range(100))
    worst["two_layer"] = max(gradchecks.two_layer_trial(np.random.default_rng(s)) for s in range(100))
    worst["gradient_penalty"] = max(gradchecks.gradient_penalty_trial(np.random.default_rng(s))
                                    for s in range(100))
    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if not v < gradchecks.TOL}
    ok = not bad and elapsed < 60
    o.record_criterion(1, ok, f"{len(worst)} checks x 100 trials, max rel err {max(worst.values()):.2e}, "
                              f"{elapsed:.1f}s")
    assert not bad, bad
    assert elapsed < 60


def test_criterion_2_extractor_oracle():
    rng = np.random.default_rng(2)
    caps = [o.random_capture(rng, int(rng.integers(20, 51))) for _ in range(20)]
    truncated = sum(1 for c in caps for fl, _ in o.naive_extract(c, 10.0, 10).values() if fl == 10)
    problems = o.extractor_mismatches(caps)
    o.record_criterion(2, not problems and truncated > 0,
                       f"20 captures, {sum(len(c) for c in caps)} packets, {truncated} truncated samples, "
                       f"{len(problems)} mismatches")
    assert not problems
    assert truncated > 0


def test_criterion_3_algorithm_1_fidelity():
    X, y, fl = o.separable_toy(6, 14, seed=3)
    T = LabeledDataset(X, y, fl)
    g = gan.train_wgan_gp(o.unit_gaussian_toy(64), gan.GeneratorConfig(iterations=2, batch_size=8, seed=1))
    plan = PerturbationPlan.full()
    out = gadot_augment(T, plan, g, seed=4)
    RX, RY, RL = o.algorithm1(T.X, T.y, T.flow_length, list(plan.features),
                              lambda k, n: gan.generate(g, n, seed=[4, k]))
    n = len(RX)
    same = (np.array_equal(out.X[:n], RX) and np.array_equal(out.y[:n], RY)
            and np.array_equal(out.flow_length[:n], RL))
    benign_ok = all(any(np.array_equal(b, t) for t in T.X[T.y == 0]) for b in out.X[out.y == 0])
    balanced = out.counts()[0] == out.counts()[1]
    # retrain a detector in between: GADoT must not notice
    det.train(LabeledDataset(X, y, fl), det.DetectorConfig(epochs=2, kernels=8))
    again = gadot_augment(T, plan, g, seed=4)
    independent = again.digest() == out.digest()
    ok = same and benign_ok and balanced and independent
    o.record_criterion(3, ok, f"literal match={same} benign untouched={benign_ok} balanced={balanced} "
                              f"detector independent={independent}")
    assert ok


def test_criterion_4_fgsm_contract():
    X, y, fl = o.separable_toy(150, 150, seed=1)
    model = det.train(LabeledDataset(X, y, fl), det.DetectorConfig(epochs=15, kernels=16))
    A, _, _ = o.separable_toy(0, 100, seed=5)
    identity = np.array_equal(fgsm_samples(A, model, 0.0), A)
    bounded = all(np.abs(fgsm_samples(A, model, e) - A).max() <= e + 1e-12 for e in (0.01, 0.1, 0.5))
    before = det.scores(model, A).mean()
    after = det.scores(model, fgsm_samples(A, model, 0.1)).mean()
    ok = identity and bounded and after < before
    o.record_criterion(4, ok, f"eps=0 identity={identity} linf bound={bounded} "
                              f"mean score {before:.4f} -> {after:.4f}")
    assert ok


@pytest.fixture(scope="module")
def desk():
    cfg = pl.default_config("desk", SEED)
    return cfg, [pl.run_experiment(exp, cfg, SEED, i) for i, exp in enumerate(cfg["experiments"])]


def _fnr_table(res):
    return {row.perturbation: {m: r.fnr for m, r in row.reports.items()} for row in res.rows}


@pytest.mark.slow
def test_criterion_5_unperturbed_baseline(desk):
    _, results = desk
    syn = results[0]
    f1 = syn.unperturbed["Before"].f1
    t = syn.extra["timings"]
    elapsed = t["data"] + t["plain"]
    ok = f1 is not None and f1 >= 0.95 and elapsed < 300
    o.record_criterion(5, ok, f"Model-SYN plain F1 {f1:.4f}, data + training {elapsed:.0f}s")
    assert ok


def _vulnerable(res):
    table = _fnr_table(res)
    base = table["None"]["Before"]
    return {p: v["Before"] - base for p, v in table.items() if p != "None" and v["Before"] - base >= FNR_RISE}


@pytest.mark.slow
def test_criterion_6_vulnerability(desk):
    _, (syn, http) = desk
    syn_hits = _vulnerable(syn)
    http_hits = _vulnerable(http)
    ok = len(syn_hits) >= 2 and "Delay" in http_hits
    o.record_criterion(6, ok, "SYN rises: " + ", ".join(f"{p} +{d:.3f}" for p, d in syn_hits.items())
                       + "; HTTP rises: " + ", ".join(f"{p} +{d:.3f}" for p, d in http_hits.items()))
    assert ok


@pytest.mark.slow
def test_criterion_7_gadot_robustness(desk):
    _, results = desk
    worst = []
    for res in results:
        table = _fnr_table(res)
        worst += [(f"{res.name}/{p}", table[p]["GADoT"]) for p in _vulnerable(res)]
    if not any(p.endswith("/Delay") for p, _ in worst):
        worst.append(("Model-HTTP/Delay", _fnr_table(results[1])["Delay"]["GADoT"]))
    failing = [(p, v) for p, v in worst if v is None or v > GADOT_FNR]
    drops = {res.name: res.unperturbed["Before"].f1 - res.unperturbed["GADoT"].f1 for res in results}
    ok = not failing and all(d <= F1_DROP for d in drops.values())
    detail = ", ".join(f"{p} {v:.4f}" for p, v in worst) + "; F1 drop " + \
        ", ".join(f"{k} {v:+.4f}" for k, v in drops.items())
    o.record_criterion(7, ok, detail)
    assert not failing, f"GADoT FNR above {GADOT_FNR}: {failing}"
    assert all(d <= F1_DROP for d in drops.values()), drops


@pytest.mark.slow
def test_criterion_8_baseline_ordering(desk):
    _, results = desk
    lines, ordered, gap = [], True, []
    for res in results:
        table = _fnr_table(res)
        perturbed = [p for p in table if p != "None"]
        w = {m: max(table[p][m] for p in perturbed) for m in ("GADoT", "BFP", "FGSM")}
        ordered &= w["GADoT"] <= w["BFP"] <= w["FGSM"]
        gap += [(res.name, p, table[p]["BFP"] - table[p]["GADoT"]) for p in perturbed
                if table[p]["BFP"] - table[p]["GADoT"] >= BFP_GAP]
        lines.append(f"{res.name} worst GADoT {w['GADoT']:.4f} <= BFP {w['BFP']:.4f} <= FGSM {w['FGSM']:.4f}")
    ok = ordered and bool(gap)
    o.record_criterion(8, ok, "; ".join(lines) + "; BFP-GADoT gaps: "
                       + ", ".join(f"{n}/{p} {d:.3f}" for n, p, d in gap))
    assert ordered
    assert gap


@pytest.mark.slow
def test_criterion_9_trace_validity(desk):
    cfg, _ = desk
    checked = bad = syn_lost = 0
    for i, exp in enumerate(cfg["experiments"]):
        _, sc_test = pl.experiment_scenarios(exp, SEED, i)
        att, vic = pl.attack_filter(sc_test)
        att = set(att)
        original = synthesize(sc_test)
        n_syn = sum(1 for r in original if (p := pk.decode(r.frame)).src in att and p.tcp_flags & pk.SYN
                    and not p.tcp_flags & pk.ACK)
        for _, pkts, _ in pl.perturbed_traces(original, exp, sorted(att), vic, SEED, i):
            checked += len(pkts)
            bad += sum(1 for r in pkts if not o.frame_checksums_ok(r.frame))
            attack = [pk.decode(r.frame) for r in pkts if pk.decode(r.frame).src in att]
            syns = sum(1 for p in attack if p.tcp_flags & pk.SYN and not p.tcp_flags & pk.ACK)
            syn_lost += max(0, n_syn - syns)
    ok = bad == 0 and syn_lost == 0
    o.record_criterion(9, ok, f"{checked} perturbed packets checked, {bad} bad checksums, {syn_lost} SYNs lost")
    assert ok


@pytest.mark.slow
def test_criterion_10_reproduce_determinism(tmp_path):
    outs = []
    for run in ("a", "b"):
        d = tmp_path / run
        assert main(["--seed", "11", "reproduce", "--scale", "toy", "--out", str(d)]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    same = outs[0] == outs[1] and len(outs[0]) > 0
    o.record_criterion(10, same, f"{len(outs[0])} report files compared, identical={same}")
    assert same
