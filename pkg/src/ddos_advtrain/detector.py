"""Compact CNN classifier over 10x11 flow samples.

Architecture: one convolution with 64 kernels of height 3 spanning all 11
feature columns, ReLU, global max-pool over rows, dense layer, sigmoid.
Trained with binary cross-entropy and Adam; early stopping watches the F1
score on a seeded, stratified 10% validation split.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .features import N_FEATURES, N_ROWS
from .flows import LabeledDataset
from .layers import Conv2d, Dense, Module

log = logging.getLogger(__name__)

DETECTOR_CHECKPOINT_KIND = "detector"


@dataclass
class DetectorConfig:
    kernels: int = 64
    kernel_height: int = 3
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    patience: int = 5
    val_fraction: float = 0.1
    threshold: float = 0.5
    dropout: float = 0.0  # on the pooled features, training only
    seed: int = 0

    def validate(self):
        if self.kernels < 1 or not 1 <= self.kernel_height <= N_ROWS:
            raise ValueError("kernels must be >= 1 and kernel_height within the sample height")
        if self.epochs < 0 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and patience >= 1 required")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must be in [0, 1]")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


class Net(Module):
    def __init__(self, kernels: int, kernel_height: int, rng: np.random.Generator):
        self.conv = Conv2d(1, kernels, (kernel_height, N_FEATURES), rng)
        self.out = Dense(kernels, 1, rng)
        self.kernels = kernels

    def __call__(self, x: ad.Tensor, drop_mask: np.ndarray | None = None) -> ad.Tensor:
        """Logits for a batch shaped (n, 10, 11); ``drop_mask`` scales pooled features."""
        n = x.shape[0]
        h = ad.relu(self.conv(x.reshape(n, 1, N_ROWS, N_FEATURES)))  # (n, k, rows', 1)
        h = ad.tmax(h.reshape(n, self.kernels, -1), axis=2)
        if drop_mask is not None:
            h = h * ad.Tensor(drop_mask)
        return self.out(h).reshape(n)


@dataclass
class DetectorModel:
    net: Net
    config: DetectorConfig
    meta: dict = field(default_factory=dict)

    @property
    def threshold(self) -> float:
        return self.config.threshold


def init_model(config: DetectorConfig) -> DetectorModel:
    config.validate()
    rng = np.random.default_rng([config.seed, 0])
    return DetectorModel(Net(config.kernels, config.kernel_height, rng), config)


def _check_samples(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != (N_ROWS, N_FEATURES):
        raise ad.ShapeError(f"detector expects samples shaped ({N_ROWS}, {N_FEATURES}), got {X.shape}")
    return X


def logits(model: DetectorModel, X) -> ad.Tensor:
    """Differentiable logits; pass a Tensor with requires_grad for input gradients."""
    x = X if isinstance(X, ad.Tensor) else ad.Tensor(_check_samples(X))
    if x.ndim != 3 or x.shape[1:] != (N_ROWS, N_FEATURES):
        raise ad.ShapeError(f"detector expects samples shaped ({N_ROWS}, {N_FEATURES}), got {x.shape}")
    return model.net(x)


def _inference_logits(net: Net, X: np.ndarray) -> np.ndarray:
    """Forward pass whose reductions run per sample, so a score never depends on
    batch composition (BLAS kernels pick summation orders by matrix shape)."""
    kh = net.conv.kernel[0]
    win = np.lib.stride_tricks.sliding_window_view(X, kh, axis=1)  # (n, rows', 11, kh)
    win = win.transpose(0, 1, 3, 2).reshape(len(X), -1, 1, kh * N_FEATURES)
    h = (win * net.conv.weight.data.T[None, None]).sum(axis=-1) + net.conv.bias.data
    h = np.maximum(h, 0.0).max(axis=1)  # (n, kernels)
    return (h * net.out.weight.data[:, 0]).sum(axis=-1) + net.out.bias.data[0]


def scores(model: DetectorModel, X, batch_size: int = 256) -> np.ndarray:
    X = _check_samples(X)
    out = np.empty(len(X))
    for i in range(0, len(X), batch_size):
        out[i:i + batch_size] = ad.sigmoid_np(_inference_logits(model.net, X[i:i + batch_size]))
    return out


def classify(model: DetectorModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Return (scores in [0, 1], labels); a score equal to the threshold counts as DDoS."""
    s = scores(model, X)
    return s, (s >= model.threshold).astype(np.int64)


def _f1(y: np.ndarray, pred: np.ndarray) -> float:
    tp = int(((pred == 1) & (y == 1)).sum())
    fp = int(((pred == 1) & (y == 0)).sum())
    fn = int(((pred == 0) & (y == 1)).sum())
    return 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)


def stratified_split(y: np.ndarray, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    val = []
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        k = int(round(fraction * len(idx)))
        if fraction > 0 and len(idx) >= 2:
            k = max(k, 1)
        val.append(rng.permutation(idx)[:k])
    val = np.sort(np.concatenate(val))
    train = np.setdiff1d(np.arange(len(y)), val)
    return train, val


def train(dataset: LabeledDataset, config: DetectorConfig | None = None) -> DetectorModel:
    config = config or DetectorConfig()
    config.validate()
    X = _check_samples(dataset.X)
    y = dataset.y
    if len(np.unique(y)) < 2:
        raise ValueError("detector training needs both benign and DDoS samples")
    model = init_model(config)
    rng = np.random.default_rng([config.seed, 1])
    tr, va = stratified_split(y, config.val_fraction, rng)
    params = model.net.parameters()
    opt = ad.Adam(params, lr=config.lr)
    history = []
    best = (-1.0, model.net.state_dict(), 0)
    stale = 0
    for epoch in range(config.epochs):
        order = rng.permutation(tr)
        losses = []
        for i in range(0, len(order), config.batch_size):
            b = order[i:i + config.batch_size]
            mask = None
            if config.dropout > 0:
                keep = 1.0 - config.dropout
                mask = (rng.random((len(b), config.kernels)) < keep) / keep
            loss = ad.bce_with_logits(model.net(ad.Tensor(X[b]), mask), ad.Tensor(y[b].astype(np.float64)))
            opt.step(ad.grad(loss, params))
            losses.append(loss.item() * len(b))
        eval_idx = va if len(va) else tr
        f1 = _f1(y[eval_idx], (scores(model, X[eval_idx]) >= config.threshold).astype(np.int64))
        history.append({"epoch": epoch, "loss": float(np.sum(losses) / len(tr)), "val_f1": f1})
        log.info("detector epoch %d: loss %.5f val F1 %.4f", epoch, history[-1]["loss"], f1)
        # ties keep the later parameters: loss keeps falling on an F1 plateau
        stale = 0 if f1 > best[0] else stale + 1
        if f1 >= best[0]:
            best = (f1, model.net.state_dict(), epoch + 1)
        if stale >= config.patience:
            break
    if config.epochs > 0:
        model.net.load_state_dict(best[1])
    model.meta = {"dataset_digest": dataset.digest(), "epochs_run": len(history),
                  "best_epoch": best[2], "history": history}
    return model


def save_detector(path, model: DetectorModel, meta: dict | None = None) -> None:
    header = {"kind": DETECTOR_CHECKPOINT_KIND, "config": dataclasses.asdict(model.config),
              "train": model.meta, **(meta or {})}
    ad.save_checkpoint(path, model.net.state_dict(), header)


def load_detector(path) -> DetectorModel:
    tensors, meta = ad.load_checkpoint(path)
    if meta.get("kind") != DETECTOR_CHECKPOINT_KIND:
        raise ValueError(f"{path}: not a detector checkpoint")
    model = init_model(DetectorConfig(**meta["config"]))
    model.net.load_state_dict(tensors)
    model.meta = meta.get("train", {})
    return model
