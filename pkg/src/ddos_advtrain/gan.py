"""WGAN-GP over 10x11 benign samples.

The generator turns 20-d Gaussian noise into fake-benign sample matrices
whose values lie in [0, 1].  This module reads benign data only and has no
dependency on the detector.

Canonical toy DCGAN for 10x11 inputs::

    G: dense(20 -> 32*5*6) . lrelu . reshape(32,5,6) . conv3x3/p1 -> 16 . lrelu
       . upsample x2 (16,10,12) . conv3x2/p(1,0) -> 1 (1,10,11) . tanh . (x+1)/2
    D: conv3x3/p1 1 -> 16 . lrelu . conv3x3/s2/p1 -> 32 (5,6) . lrelu . dense(960 -> 1)

No normalisation layers in the critic, as the gradient penalty is per sample.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .features import N_FEATURES, N_ROWS
from .flows import LabeledDataset
from .layers import Conv2d, Dense, Module, upsample_nearest

log = logging.getLogger(__name__)

GAN_CHECKPOINT_KIND = "wgan_gp"


@dataclass
class GeneratorConfig:
    noise_dim: int = 20
    batch_size: int = 32
    iterations: int = 200  # generator updates
    critic_steps: int = 5
    gp_lambda: float = 10.0
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.9
    seed: int = 0

    def validate(self):
        if not 1 <= self.noise_dim < N_ROWS * N_FEATURES:
            raise ValueError(f"noise_dim must be in [1, {N_ROWS * N_FEATURES})")
        for name in ("batch_size", "critic_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.gp_lambda < 0 or self.lr <= 0:
            raise ValueError("gp_lambda must be >= 0 and lr > 0")


class Generator(Module):
    def __init__(self, noise_dim: int, rng: np.random.Generator):
        self.fc = Dense(noise_dim, 32 * 5 * 6, rng)
        self.conv1 = Conv2d(32, 16, (3, 3), rng, padding=(1, 1))
        self.conv2 = Conv2d(16, 1, (3, 2), rng, padding=(1, 0))

    def __call__(self, z: ad.Tensor) -> ad.Tensor:
        n = z.shape[0]
        h = ad.leaky_relu(self.fc(z)).reshape(n, 32, 5, 6)
        h = upsample_nearest(ad.leaky_relu(self.conv1(h)), 2)
        out = ad.tanh(self.conv2(h))  # (n, 1, 10, 11)
        return (out + 1.0) * 0.5


class Critic(Module):
    def __init__(self, rng: np.random.Generator):
        self.conv1 = Conv2d(1, 16, (3, 3), rng, padding=(1, 1))
        self.conv2 = Conv2d(16, 32, (3, 3), rng, stride=2, padding=(1, 1))
        self.fc = Dense(32 * 5 * 6, 1, rng)

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        n = x.shape[0]
        h = ad.leaky_relu(self.conv1(x))
        h = ad.leaky_relu(self.conv2(h))
        return self.fc(h.reshape(n, 32 * 5 * 6)).reshape(n)


@dataclass
class GanModel:
    generator: Generator
    critic: Critic
    config: GeneratorConfig
    history: list[dict] = field(default_factory=list)


def init_model(config: GeneratorConfig) -> GanModel:
    config.validate()
    rng = np.random.default_rng([config.seed, 0])
    return GanModel(Generator(config.noise_dim, rng), Critic(rng), config)


def _benign_matrix(benign) -> np.ndarray:
    if isinstance(benign, LabeledDataset):
        if np.any(benign.y != 0):
            raise ValueError(f"GAN training data contains {int((benign.y != 0).sum())} DDoS-labelled samples")
        X = benign.X
    else:
        X = np.asarray(benign, dtype=np.float64)
    if X.ndim != 3 or X.shape[1:] != (N_ROWS, N_FEATURES):
        raise ad.ShapeError(f"GAN expects (n, {N_ROWS}, {N_FEATURES}) samples, got {X.shape}")
    return X


def critic_step(model: GanModel, real: np.ndarray, z: np.ndarray, u: np.ndarray) -> dict:
    """Compute the critic loss and its parameter gradients; returns diagnostics."""
    cfg = model.config
    with ad.no_grad():
        fake = model.generator(ad.Tensor(z)).data
    real4 = real[:, None]
    d_real = model.critic(ad.Tensor(real4))
    d_fake = model.critic(ad.Tensor(fake))
    x_hat = ad.Tensor(u[:, None, None, None] * real4 + (1.0 - u[:, None, None, None]) * fake,
                      requires_grad=True)
    d_hat = model.critic(x_hat)
    (g,) = ad.grad(ad.tsum(d_hat), [x_hat], create_graph=True)
    norms = ad.sqrt(ad.tsum(g * g, axis=(1, 2, 3)) + 1e-12)
    penalty = ad.mean((norms - 1.0) ** 2)
    w_est = ad.mean(d_real) - ad.mean(d_fake)
    loss = -w_est + cfg.gp_lambda * penalty
    params = model.critic.parameters()
    grads = ad.grad(loss, params)
    return {"loss": loss.item(), "wasserstein": w_est.item(), "penalty": penalty.item(),
            "grad_norm": float(norms.data.mean()), "grads": grads}


def generator_step(model: GanModel, z: np.ndarray) -> tuple[float, list]:
    fake = model.generator(ad.Tensor(z))
    loss = -ad.mean(model.critic(fake))
    return loss.item(), ad.grad(loss, model.generator.parameters())


def train_wgan_gp(benign, config: GeneratorConfig | None = None, model: GanModel | None = None,
                  log_every: int = 50) -> GanModel:
    """Train G and D on benign samples (labels must all be 0)."""
    config = config or GeneratorConfig()
    config.validate()
    X = _benign_matrix(benign)
    if len(X) < 1:
        raise ValueError("GAN training needs at least one benign sample")
    model = model or init_model(config)
    rng = np.random.default_rng([config.seed, 1])
    opt_d = ad.Adam(model.critic.parameters(), lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    opt_g = ad.Adam(model.generator.parameters(), lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    bs = min(config.batch_size, len(X))
    for it in range(config.iterations):
        stats = []
        for _ in range(config.critic_steps):
            real = X[rng.integers(0, len(X), size=bs)]
            z = rng.standard_normal((bs, config.noise_dim))
            u = rng.uniform(size=bs)
            s = critic_step(model, real, z, u)
            if not np.isfinite(s["loss"]):
                raise FloatingPointError(f"critic loss non-finite at iteration {it}: {s}")
            opt_d.step(s.pop("grads"))
            stats.append(s)
        g_loss, g_grads = generator_step(model, rng.standard_normal((bs, config.noise_dim)))
        if not np.isfinite(g_loss):
            raise FloatingPointError(f"generator loss non-finite at iteration {it}")
        opt_g.step(g_grads)
        last = stats[-1]
        model.history.append({"iteration": it, "critic_loss": last["loss"], "generator_loss": g_loss,
                              "wasserstein": last["wasserstein"], "penalty": last["penalty"],
                              "grad_norm": last["grad_norm"]})
        if log_every and (it + 1) % log_every == 0:
            log.info("gan iter %d: W=%.4f gp=%.4f g=%.4f", it + 1, last["wasserstein"],
                     last["penalty"], g_loss)
    return model


def generate(model: GanModel, n: int, seed) -> np.ndarray:
    """Draw ``n`` fake-benign samples, shape (n, 10, 11), values in [0, 1]."""
    if n < 1:
        raise ValueError("n must be >= 1")
    z = np.random.default_rng(seed).standard_normal((n, model.config.noise_dim))
    with ad.no_grad():
        out = model.generator(ad.Tensor(z)).data[:, 0]
    return np.clip(out, 0.0, 1.0)


def critic_scores(model: GanModel, X: np.ndarray) -> np.ndarray:
    with ad.no_grad():
        return model.critic(ad.Tensor(np.asarray(X, dtype=np.float64)[:, None])).data.copy()


def save_gan(path, model: GanModel, meta: dict | None = None) -> None:
    tensors = {f"G.{k}": v for k, v in model.generator.state_dict().items()}
    tensors.update({f"D.{k}": v for k, v in model.critic.state_dict().items()})
    header = {"kind": GAN_CHECKPOINT_KIND, "config": dataclasses.asdict(model.config),
              "history": model.history, **(meta or {})}
    ad.save_checkpoint(path, tensors, header)


def load_gan(path) -> GanModel:
    tensors, meta = ad.load_checkpoint(path)
    if meta.get("kind") != GAN_CHECKPOINT_KIND:
        raise ValueError(f"{path}: not a GAN checkpoint")
    model = init_model(GeneratorConfig(**meta["config"]))
    model.generator.load_state_dict({k[2:]: v for k, v in tensors.items() if k.startswith("G.")})
    model.critic.load_state_dict({k[2:]: v for k, v in tensors.items() if k.startswith("D.")})
    model.history = list(meta.get("history", []))
    return model
