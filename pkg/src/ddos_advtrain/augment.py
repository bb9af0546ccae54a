"""Adversarial training sets: GADoT, benign feature perturbation (BFP) and FGSM.

All inputs are normalised datasets (values in [0, 1]).  Donor alignment:
the i-th DDoS sample takes its values from the i-th donor sample.  For a
column feature only the sample's real (non-padded) rows are overwritten; for
``flow_length`` the padded rows j >= flow_length are filled from row j of the
donor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .features import COLUMN, FLOW_LENGTH, N_ROWS, PLAN_FEATURES, canonical_feature
from .flows import LabeledDataset

PROVENANCE = ("original", "gadot", "bfp", "fgsm", "duplicate-benign")


@dataclass(frozen=True)
class PerturbationPlan:
    features: tuple[str, ...]

    def __post_init__(self):
        if not self.features:
            raise ValueError("perturbation plan is empty")
        canon = tuple(canonical_feature(f) for f in self.features)
        if len(set(canon)) != len(canon):
            raise ValueError(f"perturbation plan has duplicates: {list(self.features)}")
        object.__setattr__(self, "features", canon)

    @classmethod
    def full(cls) -> "PerturbationPlan":
        return cls(PLAN_FEATURES)

    @classmethod
    def parse(cls, text: str) -> "PerturbationPlan":
        if text.strip().lower() in ("all", "full"):
            return cls.full()
        return cls(tuple(p for p in (s.strip() for s in text.split(",")) if p))


def _concat(parts: list[LabeledDataset], meta: dict) -> LabeledDataset:
    first = parts[0]
    return LabeledDataset(
        X=np.concatenate([p.X for p in parts]),
        y=np.concatenate([p.y for p in parts]),
        flow_length=np.concatenate([p.flow_length for p in parts]),
        keys=np.concatenate([p.keys for p in parts]),
        window=np.concatenate([p.window for p in parts]),
        profile=first.profile,
        meta=meta,
        provenance=np.concatenate([p.provenance for p in parts]),
    )


def _copy(ds: LabeledDataset) -> LabeledDataset:
    return ds.subset(np.arange(len(ds)))


def apply_donors(T: LabeledDataset, feature: str, donors: np.ndarray,
                 donor_lengths: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Return (X, flow_length) of T with DDoS samples perturbed in ``feature`` from ``donors``.

    ``donors`` has one (10, 11) matrix per DDoS sample, in dataset order.
    ``donor_lengths`` (real donors only) caps how many padded rows can be
    filled; generated donors have no padding and fill every row.
    """
    X = T.X.copy()
    fl = T.flow_length.copy()
    ddos = np.flatnonzero(T.y == 1)
    if len(donors) != len(ddos):
        raise ValueError(f"{len(donors)} donors for {len(ddos)} DDoS samples")
    rows = np.arange(N_ROWS)[None, :]
    if feature == FLOW_LENGTH:
        limit = np.full(len(ddos), N_ROWS) if donor_lengths is None else np.maximum(donor_lengths, fl[ddos])
        pad = (rows >= fl[ddos][:, None]) & (rows < limit[:, None])
        sub = X[ddos]
        sub[pad] = donors[pad]
        X[ddos] = sub
        fl[ddos] = np.maximum(fl[ddos], limit)
    else:
        col = COLUMN[feature]
        real = rows < fl[ddos][:, None]
        sub = X[ddos, :, col]
        sub[real] = donors[:, :, col][real]
        X[ddos, :, col] = sub
    return X, fl


def _plan_augment(T: LabeledDataset, plan: PerturbationPlan, tag: str,
                  draw: Callable[[int, int], tuple[np.ndarray, np.ndarray | None]],
                  seed: int) -> LabeledDataset:
    n_ddos = int((T.y == 1).sum())
    parts = [_copy(T)]
    for k, f in enumerate(plan.features):
        Tc = _copy(T)
        if n_ddos:
            donors, lengths = draw(k, n_ddos)
            Tc.X, Tc.flow_length = apply_donors(T, f, donors, lengths)
        Tc.provenance = np.where(T.y == 1, tag, "duplicate-benign").astype("<U16")
        parts.append(Tc)
    meta = dict(T.meta, augment=tag, plan=list(plan.features), augment_seed=seed)
    return balance(_concat(parts, meta), seed=seed)


def gadot_augment(T: LabeledDataset, plan: PerturbationPlan, generator, seed: int = 0) -> LabeledDataset:
    """GADoT: donors come from the GAN generator; the detector is never consulted."""
    from .gan import generate

    def draw(k, n):
        return generate(generator, n, seed=[seed, k]), None

    return _plan_augment(T, plan, "gadot", draw, seed)


def bfp_augment(T: LabeledDataset, plan: PerturbationPlan, seed: int = 0) -> LabeledDataset:
    """BFP: donors are real benign samples of T drawn with replacement."""
    benign = np.flatnonzero(T.y == 0)
    if len(benign) == 0:
        raise ValueError("BFP needs at least one benign sample")

    def draw(k, n):
        pick = benign[np.random.default_rng([seed, k]).integers(0, len(benign), size=n)]
        return T.X[pick], T.flow_length[pick]

    return _plan_augment(T, plan, "bfp", draw, seed)


def fgsm_samples(X: np.ndarray, model, epsilon: float) -> np.ndarray:
    """One signed-gradient step raising the BCE loss w.r.t. label 1 (DDoS), clipped to [0, 1]."""
    from .detector import logits

    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if epsilon == 0 or len(X) == 0:
        return X.copy()
    x = ad.Tensor(X, requires_grad=True)
    loss = ad.bce_with_logits(logits(model, x), ad.Tensor(np.ones(len(X))))
    (g,) = ad.grad(loss, [x])
    return np.clip(X + epsilon * np.sign(g.data), 0.0, 1.0)


def fgsm_augment(T: LabeledDataset, model, epsilon: float = 0.1, seed: int = 0) -> LabeledDataset:
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    ddos = np.flatnonzero(T.y == 1)
    adv = T.subset(ddos)
    adv.X = fgsm_samples(T.X[ddos], model, epsilon)
    touched = np.any(adv.X != 0, axis=2)
    last = np.where(touched.any(axis=1), N_ROWS - np.argmax(touched[:, ::-1], axis=1), 0)
    adv.flow_length = np.maximum(adv.flow_length, last)
    adv.provenance = np.full(len(ddos), "fgsm", dtype="<U16")
    meta = dict(T.meta, augment="fgsm", epsilon=float(epsilon), augment_seed=seed)
    return balance(_concat([_copy(T), adv], meta), seed=seed)


def balance(ds: LabeledDataset, seed: int = 0) -> LabeledDataset:
    """Duplicate benign samples round-robin over a seeded shuffle until classes are equal."""
    n_benign, n_ddos = ds.counts()
    if n_benign == 0:
        raise ValueError("cannot balance a dataset without benign samples")
    need = n_ddos - n_benign
    if need <= 0:
        return ds
    order = np.random.default_rng([seed, 99]).permutation(np.flatnonzero(ds.y == 0))
    pick = order[np.arange(need) % len(order)]
    dup = ds.subset(pick)
    dup.provenance = np.full(need, "duplicate-benign", dtype="<U16")
    return _concat([ds, dup], dict(ds.meta))
