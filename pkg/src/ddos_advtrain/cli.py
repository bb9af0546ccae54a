"""Command-line entry point: ``ddos-advtrain <subcommand> ...``.

Exit codes: 0 success, 1 internal error, 2 usage or input error.  Every
artifact written here carries the tool version, a hash of the effective
configuration and the seed (dataset/checkpoint metadata, report header
lines, or a ``<file>.meta.json`` sidecar for capture files).
"""

from __future__ import annotations

import argparse
import hashlib
import ipaddress
import json
import logging
import os
import sys
from pathlib import Path

log = logging.getLogger("ddos_advtrain")

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


class InputError(Exception):
    """Bad user input: exit code 2."""


# --------------------------------------------------------------------------
# helpers


def _existing(path: str | None, what: str = "input file") -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.exists():
        raise InputError(f"{what} not found: {p}")
    return p


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = _existing(path, "config file")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise InputError(f"{p}: invalid JSON config ({e})") from e
    if not isinstance(cfg, dict):
        raise InputError(f"{p}: config must be a JSON object")
    return cfg


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _provenance(effective: dict, seed: int) -> dict:
    from . import __version__
    return {"tool": "ddos-advtrain", "version": __version__, "config_hash": _hash(effective), "seed": seed}


def _header_lines(prov: dict) -> list[str]:
    return [f"{k}={v}" for k, v in prov.items()]


def _write_sidecar(path: Path, prov: dict, effective: dict, extra: dict | None = None) -> None:
    body = {"provenance": prov, "config": effective, **(extra or {})}
    Path(str(path) + ".meta.json").write_text(json.dumps(body, indent=2, sort_keys=True, default=str) + "\n")


def _parse_ips(text: str | None) -> list[str]:
    """Comma-separated addresses or CIDR networks."""
    if not text:
        return []
    out = []
    for tok in (t.strip() for t in text.split(",")):
        if not tok:
            continue
        try:
            if "/" in tok:
                net = ipaddress.IPv4Network(tok, strict=False)
                out.extend(str(a) for a in (net if net.num_addresses <= 2 else net.hosts()))
            else:
                out.append(str(ipaddress.IPv4Address(tok)))
        except ValueError as e:
            raise InputError(f"bad address {tok!r}: {e}") from e
    return out


def _pairs(items: list[str] | None, flag: str) -> dict[str, str]:
    out = {}
    for item in items or []:
        name, sep, value = item.partition("=")
        if not sep or not name or not value:
            raise InputError(f"{flag} expects NAME=PATH, got {item!r}")
        out[name] = value
    return out


def _build(cls, cfg: dict, key: str, **overrides):
    """Dataclass from config section ``key`` with non-None flag overrides."""
    fields = dict(cfg.get(key, {}))
    fields.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**fields)
    except TypeError as e:
        raise InputError(f"config section {key!r}: {e}") from e


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args, cfg: dict) -> int:
    from .pcap import write_pcap
    from .synth import TrafficScenario, synthesize

    scen = dict(cfg.get("scenario", {}))
    if args.scenario:
        scen = json.loads(_existing(args.scenario, "scenario file").read_text())
    if args.duration is not None:
        scen["duration"] = args.duration
    if args.attack == "none":
        scen["attack"] = None
    elif args.attack or args.rate is not None:
        scen["attack"] = dict(scen.get("attack") or {})
        if args.attack:
            scen["attack"]["kind"] = args.attack
        if args.rate is not None:
            scen["attack"]["rate"] = args.rate
    scen["seed"] = args.seed
    sc = TrafficScenario.from_dict(scen)
    packets = synthesize(sc)
    write_pcap(args.out, packets)
    effective = sc.to_dict()
    _write_sidecar(Path(args.out), _provenance(effective, args.seed), effective,
                   {"attackers": sc.attacker_ips(), "victims": [sc.attack.victim] if sc.attack else []})
    print(json.dumps({"packets": len(packets), "out": str(args.out)}, sort_keys=True))
    return 0


def _labels_from(args) -> tuple[list[str], list[str]]:
    attackers, victims = _parse_ips(args.attackers), _parse_ips(args.victims)
    if args.labels_from:
        side = json.loads(_existing(args.labels_from, "label file").read_text())
        attackers = attackers or side.get("attackers", [])
        victims = victims or side.get("victims", [])
    if bool(attackers) != bool(victims):
        raise InputError("labelling needs both --attackers and --victims")
    return attackers, victims


def cmd_extract(args, cfg: dict) -> int:
    from .flows import (extract_samples, fit_and_apply_normalization, label_by_endpoints, load_dataset,
                        parse_capture, save_dataset)

    src = _existing(args.inp)
    window = args.window if args.window is not None else cfg.get("window_seconds", 10.0)
    max_pk = args.max_packets if args.max_packets is not None else cfg.get("max_packets", 10)
    if window <= 0 or max_pk < 1:
        raise InputError("--window must be > 0 and --max-packets >= 1")
    attackers, victims = _labels_from(args)
    parsed = parse_capture(src)
    samples = extract_samples(parsed.records, window, max_pk)
    effective = {"window_seconds": window, "max_packets": max_pk, "attackers": attackers,
                 "victims": victims, "input": src.name, "normalize": not args.raw}
    prov = _provenance(effective, args.seed)
    ds = label_by_endpoints(samples, attackers, victims,
                            {"provenance": prov, "config": effective, "source": str(src),
                             "skipped": {"non_ip": parsed.skipped_non_ip, "ipv6": parsed.skipped_ipv6,
                                         "malformed": parsed.skipped_malformed}})
    if not args.raw:
        profile = load_dataset(_existing(args.profile, "profile dataset")).profile if args.profile else None
        if args.profile and profile is None:
            raise InputError(f"{args.profile}: dataset carries no normalization profile")
        if len(ds) == 0 and profile is None:
            raise InputError(f"{src}: no samples to fit a normalization on")
        ds = fit_and_apply_normalization(ds, profile)
    save_dataset(args.out, ds)
    benign, ddos = ds.counts()
    print(json.dumps({"samples": len(ds), "benign": benign, "ddos": ddos, "out": str(args.out)}, sort_keys=True))
    return 0


def cmd_train_gan(args, cfg: dict) -> int:
    import numpy as np

    from . import gan
    from .flows import load_dataset

    ds = load_dataset(_existing(args.data))
    benign = ds.subset(np.flatnonzero(ds.y == 0))
    if len(benign) == 0:
        raise InputError(f"{args.data}: no benign samples to train the GAN on")
    gcfg = _build(gan.GeneratorConfig, cfg, "gan", iterations=args.iters, batch_size=args.batch_size,
                  seed=args.seed)
    model = gan.train_wgan_gp(benign, gcfg)
    effective = {"gan": gcfg.__dict__, "data_digest": ds.digest()}
    gan.save_gan(args.out, model, {"provenance": _provenance(effective, args.seed), "config_full": effective})
    last = model.history[-1] if model.history else {}
    print(json.dumps({"iterations": gcfg.iterations, "benign_samples": len(benign), "last": last,
                      "out": str(args.out)}, sort_keys=True))
    return 0


def cmd_augment(args, cfg: dict) -> int:
    from . import augment as au
    from .flows import load_dataset, save_dataset

    ds = load_dataset(_existing(args.data))
    if not ds.normalized:
        raise InputError(f"{args.data}: augmentation needs a normalised dataset")
    effective = {"method": args.method, "data_digest": ds.digest()}
    if args.method == "fgsm":
        from .detector import load_detector
        if not args.model:
            raise InputError("--method fgsm needs --model")
        eps = args.eps if args.eps is not None else cfg.get("fgsm_epsilon", 0.1)
        out = au.fgsm_augment(ds, load_detector(_existing(args.model)), eps, seed=args.seed)
        effective["epsilon"] = eps
    else:
        try:
            plan = au.PerturbationPlan.parse(args.plan or cfg.get("plan", "all"))
        except (KeyError, ValueError) as e:
            raise InputError(f"--plan: {e}") from e
        effective["plan"] = list(plan.features)
        if args.method == "gadot":
            from .gan import load_gan
            if not args.gan:
                raise InputError("--method gadot needs --gan")
            out = au.gadot_augment(ds, plan, load_gan(_existing(args.gan)), seed=args.seed)
        else:
            out = au.bfp_augment(ds, plan, seed=args.seed)
    out.meta = dict(out.meta, provenance=_provenance(effective, args.seed), config=effective)
    save_dataset(args.out, out)
    benign, ddos = out.counts()
    print(json.dumps({"samples": len(out), "benign": benign, "ddos": ddos, "out": str(args.out)}, sort_keys=True))
    return 0


def cmd_train(args, cfg: dict) -> int:
    from . import detector as det
    from .flows import load_dataset

    ds = load_dataset(_existing(args.data))
    if not ds.normalized:
        raise InputError(f"{args.data}: training needs a normalised dataset")
    dcfg = _build(det.DetectorConfig, cfg, "detector", epochs=args.epochs, batch_size=args.batch_size,
                  lr=args.lr, seed=args.seed)
    model = det.train(ds, dcfg)
    effective = {"detector": dcfg.__dict__, "data_digest": ds.digest()}
    det.save_detector(args.out, model, {"provenance": _provenance(effective, args.seed)})
    hist = model.meta["history"]
    print(json.dumps({"epochs_run": model.meta["epochs_run"], "best_epoch": model.meta["best_epoch"],
                      "val_f1": hist[-1]["val_f1"] if hist else None, "out": str(args.out)}, sort_keys=True))
    return 0


def cmd_perturb(args, cfg: dict) -> int:
    from .pcap import read_pcap, write_pcap
    from .perturb import PerturbationSpec, compose

    src = _existing(args.inp)
    if args.spec:
        spec_d = json.loads(_existing(args.spec, "spec file").read_text())
    elif "perturbation" in cfg:
        spec_d = dict(cfg["perturbation"])
    else:
        raise InputError("perturb needs --spec or a 'perturbation' section in --config")
    if args.kinds:
        spec_d["kinds"] = [k.strip() for k in args.kinds.split(",") if k.strip()]
    spec_d["seed"] = args.seed
    spec = PerturbationSpec.from_dict(spec_d)
    packets, counts = compose(read_pcap(src), spec)
    write_pcap(args.out, packets)
    effective = spec.to_dict()
    summary = {"input": str(src), "out": str(args.out), "packets": len(packets),
               "touched": {k: int(v) for k, v in sorted(counts.items())}}
    _write_sidecar(Path(args.out), _provenance(effective, args.seed), effective, {"summary": summary})
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_classify(args, cfg: dict) -> int:
    from . import detector as det
    from .flows import load_dataset

    model = det.load_detector(_existing(args.model))
    ds = load_dataset(_existing(args.data))
    scores, labels = det.classify(model, ds.X)
    effective = {"model": Path(args.model).name, "data_digest": ds.digest(), "threshold": model.threshold}
    lines = [f"# {h}" for h in _header_lines(_provenance(effective, args.seed))]
    lines.append("index,score,predicted,label")
    lines += [f"{i},{repr(float(s))},{int(p)},{int(y)}" for i, (s, p, y) in enumerate(zip(scores, labels, ds.y))]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_evaluate(args, cfg: dict) -> int:
    import numpy as np

    from . import detector as det
    from . import evalharness as ev
    from .flows import load_dataset

    models = {name: det.load_detector(_existing(path, f"model {name}"))
              for name, path in _pairs(args.models, "--models").items()}
    if not models:
        raise InputError("evaluate needs at least one --models NAME=CKPT")
    test = load_dataset(_existing(args.test))
    perturbed = {"None": test.subset(np.flatnonzero(test.y == 1))}
    for name, path in _pairs(args.perturbed, "--perturbed").items():
        perturbed[name] = load_dataset(_existing(path, f"perturbed set {name}"))
    pool = test.subset(np.flatnonzero(test.y == 0))
    predict = {m: (lambda X, mm=mm: det.classify(mm, X)[1]) for m, mm in models.items()}
    rows = ev.run_grid(ev.ExperimentGrid(predict, pool, perturbed, tuple(models)))
    effective = {"models": sorted(models), "test_digest": test.digest(),
                 "perturbed": {k: v.digest() for k, v in perturbed.items()}}
    records = ev.grid_records(rows)
    txt = ev.render_text(records, args.title, tuple(models))
    if args.out:
        Path(args.out).write_text(ev.records_to_csv(records, _header_lines(_provenance(effective, args.seed))))
    sys.stdout.write(txt)
    return 0


def cmd_reproduce(args, cfg: dict) -> int:
    from . import pipeline as pl

    scale = args.scale or cfg.get("scale", "desk")
    if scale not in pl.SCALES:
        raise InputError(f"unknown scale {scale!r}")
    full = pl.merge_config(pl.default_config(scale, args.seed), cfg)
    full["seed"], full["scale"] = args.seed, scale
    results = pl.reproduce(full, args.out)
    for res in results:
        worst = {m: max(r.reports[m].fnr or 0.0 for r in res.rows) for m in res.rows[0].reports}
        print(json.dumps({"experiment": res.name, "worst_fnr": worst}, sort_keys=True))
    print(json.dumps({"out": str(args.out), "config_hash": pl.config_hash(full)}, sort_keys=True))
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ddos-advtrain",
                                description="Adversarial training workbench for flow-based DDoS detectors.")
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int, default=None, help="master seed (default: config 'seed' or 0)")
    p.add_argument("--deterministic", action="store_true", help="single-threaded numeric paths")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    s = sub.add_parser("synth", help="generate a synthetic capture")
    s.add_argument("--out", required=True)
    s.add_argument("--scenario", help="scenario JSON (overrides the config 'scenario' section)")
    s.add_argument("--attack", choices=("syn_flood", "http_get_flood", "none"))
    s.add_argument("--rate", type=float)
    s.add_argument("--duration", type=float)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("extract", help="capture -> labelled sample dataset")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--window", type=float, help="time window in seconds (default 10)")
    s.add_argument("--max-packets", type=int, help="rows per sample (default 10)")
    s.add_argument("--attackers", help="attacker addresses or CIDR networks, comma separated")
    s.add_argument("--victims", help="victim addresses or CIDR networks, comma separated")
    s.add_argument("--labels-from", help="sidecar .meta.json written by synth")
    s.add_argument("--profile", help="reuse the normalization of this dataset instead of fitting one")
    s.add_argument("--raw", action="store_true", help="skip normalization")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("train-gan", help="train the WGAN-GP on the benign samples of a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--iters", type=int)
    s.add_argument("--batch-size", type=int)
    s.set_defaults(func=cmd_train_gan)

    s = sub.add_parser("augment", help="build an adversarial training set")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--method", choices=("gadot", "bfp", "fgsm"), required=True)
    s.add_argument("--plan", help="'all' or comma-separated feature names")
    s.add_argument("--gan", help="GAN checkpoint (gadot)")
    s.add_argument("--model", help="detector checkpoint (fgsm)")
    s.add_argument("--eps", type=float, help="FGSM step size (default 0.1)")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("train", help="train the detector")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("perturb", help="rewrite the attack packets of a capture")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--spec", help="perturbation spec JSON")
    s.add_argument("--kinds", help="override the spec's kinds, comma separated")
    s.set_defaults(func=cmd_perturb)

    s = sub.add_parser("classify", help="score a dataset with a detector")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", help="CSV of scores (default stdout)")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("evaluate", help="before/after grid over perturbed sample sets")
    s.add_argument("--models", nargs="+", required=True, metavar="NAME=CKPT",
                   help="first model is the baseline for the deltas")
    s.add_argument("--test", required=True, help="unperturbed test dataset (supplies the benign pool)")
    s.add_argument("--perturbed", nargs="*", metavar="NAME=DATASET")
    s.add_argument("--out", help="CSV report path")
    s.add_argument("--title", default="")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("reproduce", help="run the end-to-end experiment and write report tables")
    s.add_argument("--out", default="reports")
    s.add_argument("--scale", choices=("toy", "desk"))
    s.set_defaults(func=cmd_reproduce)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse: 0 for --help, 2 for usage errors
        return int(e.code or 0)
    if args.deterministic:
        # numpy is imported lazily by the subcommands, so BLAS sees these
        for var in THREAD_VARS:
            os.environ[var] = "1"
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    stage = args.command
    try:
        cfg = _load_config(args.config)
        args.seed = int(args.seed if args.seed is not None else cfg.get("seed", 0))
        return args.func(args, cfg)
    except InputError as e:
        print(f"ddos-advtrain {stage}: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"ddos-advtrain {stage}: file not found: {e.filename or e}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as e:
        # bad parameter values, malformed inputs, unknown config keys
        print(f"ddos-advtrain {stage}: invalid input: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        log.debug("stage %s failed", stage, exc_info=True)
        print(f"ddos-advtrain {stage}: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
