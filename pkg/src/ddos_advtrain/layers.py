"""Trainable building blocks shared by the detector and the GAN."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import IndexMap, Tensor


class Module:
    def parameters(self) -> list[Tensor]:
        params = []
        for name in sorted(vars(self)):
            value = getattr(self, name)
            if isinstance(value, Tensor) and value.requires_grad:
                params.append(value)
            elif isinstance(value, Module):
                params.extend(value.parameters())
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        params.extend(item.parameters())
        return params

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for name in sorted(vars(self)):
            value = getattr(self, name)
            if isinstance(value, Tensor) and value.requires_grad:
                out[prefix + name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(f"{prefix}{name}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{prefix}{name}.{i}."))
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=ad.DTYPE)
            if arr.shape != p.shape:
                raise ad.ShapeError(f"{k}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.copy()


def _param(arr: np.ndarray) -> Tensor:
    return Tensor(np.asarray(arr, dtype=ad.DTYPE), requires_grad=True)


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        bound = np.sqrt(6.0 / (n_in + n_out))
        self.weight = _param(rng.uniform(-bound, bound, size=(n_in, n_out)))
        self.bias = _param(np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.matmul(x, self.weight) + self.bias


@lru_cache(maxsize=32)
def conv_index_map(channels: int, height: int, width: int, kh: int, kw: int,
                   stride: int = 1, pad_h: int = 0, pad_w: int = 0) -> IndexMap:
    """im2col gather for an NCHW input flattened per sample.

    Output layout is (out_h * out_w, channels * kh * kw); padded taps read 0.
    """
    out_h = (height + 2 * pad_h - kh) // stride + 1
    out_w = (width + 2 * pad_w - kw) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ad.ShapeError(f"conv: kernel {kh}x{kw} does not fit input {height}x{width}")
    oy, ox = np.meshgrid(np.arange(out_h), np.arange(out_w), indexing="ij")
    c, ky, kx = np.meshgrid(np.arange(channels), np.arange(kh), np.arange(kw), indexing="ij")
    iy = oy.reshape(-1, 1) * stride - pad_h + ky.reshape(1, -1)
    ix = ox.reshape(-1, 1) * stride - pad_w + kx.reshape(1, -1)
    inside = (iy >= 0) & (iy < height) & (ix >= 0) & (ix < width)
    flat = c.reshape(1, -1) * height * width + iy * width + ix
    idx = np.where(inside, flat, -1)
    return IndexMap(idx, channels * height * width)


def conv_output_hw(height, width, kh, kw, stride=1, pad_h=0, pad_w=0):
    return (height + 2 * pad_h - kh) // stride + 1, (width + 2 * pad_w - kw) // stride + 1


class Conv2d(Module):
    """2-D convolution over NCHW tensors via a cached gather + matmul."""

    def __init__(self, c_in: int, c_out: int, kernel: tuple[int, int], rng: np.random.Generator,
                 stride: int = 1, padding: tuple[int, int] = (0, 0)):
        kh, kw = kernel
        fan_in = c_in * kh * kw
        bound = np.sqrt(6.0 / (fan_in + c_out))
        self.c_in, self.c_out = c_in, c_out
        self.kernel = (kh, kw)
        self.stride = stride
        self.padding = tuple(padding)
        self.weight = _param(rng.uniform(-bound, bound, size=(fan_in, c_out)))
        self.bias = _param(np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ad.ShapeError(f"conv2d: expected (N, {self.c_in}, H, W) input, got {x.shape}")
        n, c, h, w = x.shape
        kh, kw = self.kernel
        imap = conv_index_map(c, h, w, kh, kw, self.stride, *self.padding)
        oh, ow = conv_output_hw(h, w, kh, kw, self.stride, *self.padding)
        cols = ad.gather(ad.reshape(x, (n, c * h * w)), imap)
        out = ad.matmul(cols, self.weight) + self.bias
        return ad.transpose(out, (0, 2, 1)).reshape(n, self.c_out, oh, ow)


@lru_cache(maxsize=8)
def upsample_index_map(channels: int, height: int, width: int, factor: int) -> IndexMap:
    c, y, x = np.meshgrid(np.arange(channels), np.arange(height * factor),
                          np.arange(width * factor), indexing="ij")
    idx = c * height * width + (y // factor) * width + (x // factor)
    return IndexMap(idx.reshape(-1), channels * height * width)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    n, c, h, w = x.shape
    imap = upsample_index_map(c, h, w, factor)
    return ad.gather(ad.reshape(x, (n, c * h * w)), imap).reshape(n, c, h * factor, w * factor)
