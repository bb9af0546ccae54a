"""Stage orchestration: synth -> extract -> train-gan -> augment -> train -> perturb -> evaluate.

``reproduce`` runs the whole desk-scale experiment for two detectors (SYN
flood and HTTP GET flood) and writes report tables.  Every artifact embeds
the tool version, a hash of the effective configuration and the seed.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import detector as det
from . import evalharness as ev
from . import gan as gan_mod
from .augment import PerturbationPlan, balance, bfp_augment, fgsm_augment, gadot_augment
from .flows import (LabeledDataset, extract_samples, fit_and_apply_normalization, label_by_endpoints,
                    parse_packets)
from .perturb import PerturbationSpec, compose
from .synth import TrafficScenario, synthesize

log = logging.getLogger(__name__)

SCALES = ("toy", "desk")

SYN_PERTURBATIONS = {
    "IP Flags": {"kinds": ["ip_flags"]},
    "TCP Len": {"kinds": ["tcp_len"]},
    "SYN Packet Replication": {"kinds": ["syn_replication"]},
    "Padding Replacement": {"kinds": ["padding_replacement"]},
    "IP Flags; TCP Len; SYN Packet Replication": {"kinds": ["ip_flags", "tcp_len", "syn_replication"]},
    "IP Flags; TCP Len; Padding Replacement": {"kinds": ["ip_flags", "tcp_len", "padding_replacement"]},
}

HTTP_PERTURBATIONS = {
    "Delay": {"kinds": ["delay"]},
    "Packet Fragmentation": {"kinds": ["fragmentation"]},
}


# Long-lived keep-alive clients put many mid-connection windows in the benign class.
BENIGN_MIX = {"think_mean": 2.5, "requests_p": 0.25, "ssh_rate": 0.3}
# Flood tool defaults: small SYN window, victim backlog that saturates.
SYN_ATTACK = {"syn_window": 8192, "backlog": 32, "backlog_timeout": 3.0}


def _experiment(name, kind, rate, duration, test_duration, perturbations, attack_extra=None):
    return {
        "name": name,
        "scenario": {"duration": duration, "benign": dict(BENIGN_MIX),
                     "attack": {"kind": kind, "rate": rate, **(attack_extra or {})}},
        "test_duration": test_duration,
        "perturbations": copy.deepcopy(perturbations),
    }


def default_config(scale: str = "desk", seed: int = 0) -> dict:
    if scale not in SCALES:
        raise ValueError(f"unknown scale {scale!r}; valid: {', '.join(SCALES)}")
    if scale == "desk":
        syn = _experiment("Model-SYN", "syn_flood", 20.0, 120.0, 90.0, SYN_PERTURBATIONS, SYN_ATTACK)
        http = _experiment("Model-HTTP", "http_get_flood", 8.0, 120.0, 90.0, HTTP_PERTURBATIONS)
        gan_cfg = {"iterations": 200, "batch_size": 32}
        det_cfg = {"epochs": 40, "patience": 8}
    else:
        syn = _experiment("Model-SYN", "syn_flood", 10.0, 40.0, 30.0, SYN_PERTURBATIONS, SYN_ATTACK)
        http = _experiment("Model-HTTP", "http_get_flood", 5.0, 40.0, 30.0, HTTP_PERTURBATIONS)
        gan_cfg = {"iterations": 20, "batch_size": 16}
        det_cfg = {"epochs": 10, "patience": 3}
    return {
        "seed": seed,
        "scale": scale,
        "window_seconds": 10.0,
        "max_packets": 10,
        "plan": "all",
        "fgsm_epsilon": 0.1,
        "gan": gan_cfg,
        "detector": det_cfg,
        "experiments": [syn, http],
    }


def merge_config(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge_config(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def provenance(cfg: dict, seed: int) -> dict:
    return {"tool": "ddos-advtrain", "version": __version__, "config_hash": config_hash(cfg), "seed": seed}


def sub_seed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1)[0])


# --------------------------------------------------------------------------
# single stages


def extract_dataset(packets, attackers, victims, window_seconds=10.0, max_packets=10,
                    meta: dict | None = None) -> LabeledDataset:
    parsed = parse_packets(packets)
    samples = extract_samples(parsed.records, window_seconds, max_packets)
    return label_by_endpoints(samples, attackers, victims, meta)


def attack_filter(scenario: TrafficScenario) -> tuple[list[str], list[str]]:
    return scenario.attacker_ips(), [scenario.attack.victim]


@dataclass
class TrainedModels:
    plain: det.DetectorModel
    gan: gan_mod.GanModel
    gadot: det.DetectorModel
    bfp: det.DetectorModel
    fgsm: det.DetectorModel
    datasets: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)  # seconds per training stage

    def predictors(self) -> dict:
        return {"Before": lambda X: det.classify(self.plain, X)[1],
                "GADoT": lambda X: det.classify(self.gadot, X)[1],
                "BFP": lambda X: det.classify(self.bfp, X)[1],
                "FGSM": lambda X: det.classify(self.fgsm, X)[1]}


def train_all(train: LabeledDataset, cfg: dict, seed: int) -> TrainedModels:
    """Plain detector, GAN, and the three adversarially trained detectors."""
    dcfg = dict(cfg.get("detector", {}))
    plan = PerturbationPlan.parse(cfg.get("plan", "all")) if isinstance(cfg.get("plan", "all"), str) \
        else PerturbationPlan(tuple(cfg["plan"]))

    def fit(ds, tag):
        return det.train(ds, det.DetectorConfig(**dict(dcfg, seed=sub_seed(seed, 10, tag))))

    t0 = time.perf_counter()
    base = balance(train, seed=sub_seed(seed, 1))
    plain = fit(base, 0)
    t_plain = time.perf_counter() - t0
    log.info("plain detector trained (%d samples)", len(base))
    benign = train.subset(np.flatnonzero(train.y == 0))
    gcfg = gan_mod.GeneratorConfig(**dict(cfg.get("gan", {}), seed=sub_seed(seed, 2)))
    g = gan_mod.train_wgan_gp(benign, gcfg)
    log.info("GAN trained (%d iterations)", gcfg.iterations)
    t_gadot = gadot_augment(train, plan, g, seed=sub_seed(seed, 3))
    t_bfp = bfp_augment(train, plan, seed=sub_seed(seed, 4))
    t_fgsm = fgsm_augment(train, plain, cfg.get("fgsm_epsilon", 0.1), seed=sub_seed(seed, 5))
    models = TrainedModels(plain, g, fit(t_gadot, 1), fit(t_bfp, 2), fit(t_fgsm, 3),
                           {"plain": base, "gadot": t_gadot, "bfp": t_bfp, "fgsm": t_fgsm},
                           {"plain": t_plain, "all": time.perf_counter() - t0})
    log.info("adversarially trained detectors ready")
    return models


@dataclass
class ExperimentResult:
    name: str
    unperturbed: dict[str, ev.MetricsReport]
    rows: list[ev.GridRow]
    extra: dict = field(default_factory=dict)


def experiment_scenarios(exp: dict, seed: int, index: int = 0) -> tuple[TrafficScenario, TrafficScenario]:
    """Training and test scenarios of an experiment; they differ only in seed and duration."""
    sc_train = TrafficScenario.from_dict(dict(exp["scenario"], seed=sub_seed(seed, 100, index)))
    sc_test = TrafficScenario.from_dict(dict(exp["scenario"], seed=sub_seed(seed, 200, index),
                                             duration=exp.get("test_duration", sc_train.duration)))
    return sc_train, sc_test


def perturbed_traces(test_packets, exp: dict, attackers, victims, seed: int, index: int = 0):
    """Yield (name, packets, touch counts) for every perturbation of an experiment."""
    for j, (pname, pspec) in enumerate(exp["perturbations"].items()):
        spec = PerturbationSpec.from_dict(dict(pspec, attackers=attackers, victims=victims,
                                               seed=sub_seed(seed, 400, index, j)))
        pkts, stats = compose(test_packets, spec)
        yield pname, pkts, stats


def run_experiment(exp: dict, cfg: dict, seed: int, index: int = 0) -> ExperimentResult:
    window, max_pk = cfg.get("window_seconds", 10.0), cfg.get("max_packets", 10)
    t0 = time.perf_counter()
    sc_train, sc_test = experiment_scenarios(exp, seed, index)
    att, vic = attack_filter(sc_train)
    raw_train = extract_dataset(synthesize(sc_train), att, vic, window, max_pk)
    train = fit_and_apply_normalization(raw_train)
    test_packets = synthesize(sc_test)
    test = fit_and_apply_normalization(extract_dataset(test_packets, att, vic, window, max_pk), train.profile)
    t_data = time.perf_counter() - t0
    log.info("%s: train %s test %s (benign, ddos)", exp["name"], train.counts(), test.counts())

    models = train_all(train, cfg, sub_seed(seed, 300, index))
    predict = models.predictors()
    unperturbed = {m: ev.compute_metrics(test.y, f(test.X)) for m, f in predict.items()}

    benign_pool = test.subset(np.flatnonzero(test.y == 0))
    perturbed = {"None": test.subset(np.flatnonzero(test.y == 1))}
    counts = {}
    for pname, pkts, stats in perturbed_traces(test_packets, exp, att, vic, seed, index):
        counts[pname] = dict(stats)
        ds = extract_dataset(pkts, att, vic, window, max_pk)
        ds = fit_and_apply_normalization(ds, train.profile)
        perturbed[pname] = ds.subset(np.flatnonzero(ds.y == 1))
    rows = ev.run_grid(ev.ExperimentGrid(predict, benign_pool, perturbed))
    timings = {"data": t_data, **models.timings, "total": time.perf_counter() - t0}
    return ExperimentResult(exp["name"], unperturbed, rows,
                            {"perturbation_counts": counts, "train_counts": train.counts(),
                             "test_counts": test.counts(), "models": models, "timings": timings})


def reproduce(cfg: dict, out_dir) -> list[ExperimentResult]:
    """Run every experiment in ``cfg`` and write reports into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = int(cfg["seed"])
    prov = provenance(cfg, seed)
    header = [f"{k}={v}" for k, v in prov.items()]
    results = []
    summary = []
    for i, exp in enumerate(cfg["experiments"]):
        res = run_experiment(exp, cfg, seed, i)
        results.append(res)
        slug = exp["name"].lower().replace(" ", "-")
        csv_text, txt = ev.render_report(res.rows, f"Evaluation of {exp['name']} against perturbed traces",
                                         header)
        (out / f"{slug}-perturbed.csv").write_text(csv_text)
        (out / f"{slug}-perturbed.txt").write_text("# " + "  ".join(header) + "\n" + txt)
        unp = ev.render_unperturbed(res.unperturbed["Before"], res.unperturbed["GADoT"],
                                    f"{exp['name']} on unperturbed test data (Before vs GADoT)")
        summary.append(unp)
        rec = [dict(perturbation="Unperturbed", method=m, tp=r.tp, fp=r.fp, fn=r.fn, tn=r.tn,
                    precision=r.precision, recall=r.recall, f1=r.f1, fnr=r.fnr,
                    delta_f1=None if m == "Before" else ev.MetricsDelta("f1", res.unperturbed["Before"].f1, r.f1).delta,
                    delta_fnr=None if m == "Before" else ev.MetricsDelta("fnr", res.unperturbed["Before"].fnr, r.fnr).delta)
               for m, r in res.unperturbed.items()]
        (out / f"{slug}-unperturbed.csv").write_text(ev.records_to_csv(rec, header))
    (out / "unperturbed.txt").write_text("# " + "  ".join(header) + "\n" + "\n".join(summary))
    (out / "config.json").write_text(json.dumps(dict(cfg, provenance=prov), indent=2, sort_keys=True) + "\n")
    return results


def scenario_to_dict(sc: TrafficScenario) -> dict:
    return dataclasses.asdict(sc)
