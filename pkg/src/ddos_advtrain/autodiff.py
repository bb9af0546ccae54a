"""Small reverse-mode differentiation engine on top of numpy.

Graphs are built eagerly while ops execute.  Every backward rule is itself
written with differentiable ops, so ``grad(..., create_graph=True)`` yields a
gradient that can be differentiated once more.  That second-order path is
what the WGAN-GP penalty needs; nothing else in the package relies on it.
"""

from __future__ import annotations

import contextlib
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

DTYPE = np.float64
CHECKPOINT_VERSION = 1

_grad_enabled = True


class ShapeError(ValueError):
    pass


class GraphStateError(RuntimeError):
    pass


@contextlib.contextmanager
def grad_mode(enabled: bool):
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = enabled
    try:
        yield
    finally:
        _grad_enabled = prev


def no_grad():
    return grad_mode(False)


class Tensor:
    """Dense float64 array plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward", "_freed")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=DTYPE, copy=True) if not isinstance(data, np.ndarray) \
            else np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._freed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.op == "leaf"

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data.item())

    def __repr__(self):
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{rg})"

    def __len__(self):
        return len(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def backward(self, seed=None, retain_graph: bool = False) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that requires grad."""
        grads = _backprop(self, seed, create_graph=False)
        for node, g in grads.items():
            if node.is_leaf and node.requires_grad:
                node.grad = g.data.copy() if node.grad is None else node.grad + g.data
        if not retain_graph:
            _free(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out._parents = tuple(parents)
        out._backward = backward
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError(f"{op} produced non-finite values")
    return out


# --------------------------------------------------------------------------
# graph traversal


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _backprop(root: Tensor, seed, create_graph: bool) -> dict[Tensor, Tensor]:
    if root._freed:
        raise GraphStateError(
            "backward called on a graph that was already consumed; run the forward pass again")
    if not root.requires_grad:
        raise GraphStateError("backward called on a tensor that does not depend on any parameter")
    if seed is None:
        if root.size != 1:
            raise ShapeError(f"seed gradient required for non-scalar output of shape {root.shape}")
        seed = Tensor(np.ones_like(root.data))
    seed = as_tensor(seed)
    if seed.shape != root.shape:
        raise ShapeError(f"seed shape {seed.shape} does not match output shape {root.shape}")

    order = _toposort(root)
    grads: dict[int, Tensor] = {id(root): seed}
    out: dict[Tensor, Tensor] = {}
    with grad_mode(create_graph):
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            out[node] = g
            if node.is_leaf:
                continue
            if node._freed or node._backward is None:
                raise GraphStateError(f"graph node {node.op} was freed before backward")
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else add(prev, pg)
    return out


def _free(root: Tensor) -> None:
    for node in _toposort(root):
        if not node.is_leaf:
            node._backward = None
            node._parents = ()
            node._freed = True


def grad(output: Tensor, inputs: Sequence[Tensor], seed=None, create_graph: bool = False,
         retain_graph: bool | None = None) -> list[Tensor]:
    """Return d(output)/d(input) for each input (zeros where unreachable)."""
    if retain_graph is None:
        retain_graph = create_graph
    got = _backprop(output, seed, create_graph)
    result = []
    for x in inputs:
        g = got.get(x)
        result.append(g if g is not None else Tensor(np.zeros_like(x.data)))
    if not retain_graph:
        _free(output)
    return result


# --------------------------------------------------------------------------
# broadcasting helpers


def _sum_to_shape(a: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if a.shape == shape:
        return a
    lead = a.ndim - len(shape)
    if lead > 0:
        a = a.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and a.shape[i] != 1)
    if axes:
        a = a.sum(axis=axes, keepdims=True)
    return a


def sum_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    in_shape = x.shape
    return _make(_sum_to_shape(x.data, shape), (x,),
                 lambda g: (broadcast_to(g, in_shape),), "sum_to")


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    in_shape = x.shape
    return _make(np.broadcast_to(x.data, shape).copy(), (x,),
                 lambda g: (sum_to(g, in_shape),), "broadcast_to")


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --------------------------------------------------------------------------
# elementwise ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (sum_to(g, sa), sum_to(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (sum_to(g, sa), sum_to(neg(g), sb)), "sub")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (neg(g),), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data * b.data, (a, b),
                 lambda g: (sum_to(mul(g, b), sa), sum_to(mul(g, a), sb)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    sa, sb = a.shape, b.shape

    def back(g):
        ga = div(g, b)
        gb = neg(div(mul(ga, a), b))
        return sum_to(ga, sa), sum_to(gb, sb)

    return _make(a.data / b.data, (a, b), back, "div")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    return _make(a.data ** p, (a,), lambda g: (mul(g, mul(p, power(a, p - 1.0))),), "pow")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_holder = []

    def back(g):
        return (div(g, mul(2.0, out_holder[0])),)

    out = _make(np.sqrt(a.data), (a,), back, "sqrt")
    out_holder.append(out)
    return out


def exp(a) -> Tensor:
    a = as_tensor(a)
    holder = []
    out = _make(np.exp(a.data), (a,), lambda g: (mul(g, holder[0]),), "exp")
    holder.append(out)
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)
    return _make(data, (a,), lambda g: (div(g, a),), "log")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    holder = []

    def back(g):
        y = holder[0]
        return (mul(g, sub(1.0, mul(y, y))),)

    out = _make(np.tanh(a.data), (a,), back, "tanh")
    holder.append(out)
    return out


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    holder = []

    def back(g):
        y = holder[0]
        return (mul(g, mul(y, sub(1.0, y))),)

    out = _make(sigmoid_np(a.data), (a,), back, "sigmoid")
    holder.append(out)
    return out


def softplus(a) -> Tensor:
    """log(1 + exp(a)), computed without overflow."""
    a = as_tensor(a)
    return _make(np.logaddexp(0.0, a.data), (a,), lambda g: (mul(g, sigmoid(a)),), "softplus")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = Tensor((a.data > 0).astype(DTYPE))
    return _make(a.data * mask.data, (a,), lambda g: (mul(g, mask),), "relu")


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    factor = Tensor(np.where(a.data > 0, 1.0, slope))
    return _make(a.data * factor.data, (a,), lambda g: (mul(g, factor),), "leaky_relu")


def abs_(a) -> Tensor:
    a = as_tensor(a)
    sign = Tensor(np.sign(a.data))
    return _make(np.abs(a.data), (a,), lambda g: (mul(g, sign),), "abs")


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    mask = Tensor(((a.data >= lo) & (a.data <= hi)).astype(DTYPE))
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (mul(g, mask),), "clip")


# --------------------------------------------------------------------------
# reductions and shape ops


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    in_shape = a.shape
    kd_shape = tuple(1 if i in axes else n for i, n in enumerate(in_shape))

    def back(g):
        return (broadcast_to(reshape(g, kd_shape), in_shape),)

    return _make(a.data.sum(axis=axes, keepdims=keepdims), (a,), back, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return mul(tsum(a, axis, keepdims), 1.0 / count)


def tmax(a, axis: int) -> Tensor:
    """Max over one axis; the gradient goes to the first maximal entry."""
    a = as_tensor(a)
    axis = axis % a.ndim
    idx = np.argmax(a.data, axis=axis)
    mask = np.zeros_like(a.data)
    np.put_along_axis(mask, np.expand_dims(idx, axis), 1.0, axis=axis)
    mask_t = Tensor(mask)
    kd_shape = tuple(1 if i == axis else n for i, n in enumerate(a.shape))

    def back(g):
        return (mul(reshape(g, kd_shape), mask_t),)

    return _make(np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis),
                 (a,), back, "max")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    in_shape = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {in_shape} into {tuple(shape)}") from None
    return _make(data, (a,), lambda g: (reshape(g, in_shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes).copy(), (a,), lambda g: (transpose(g, inv),), "transpose")


def swap_last(a) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def _mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # BLAS only takes the fast path on contiguous operands; stacked @ 2-D folds to one GEMM
    a, b = np.ascontiguousarray(a), np.ascontiguousarray(b)
    if a.ndim > 2 and b.ndim == 2:
        return (a.reshape(-1, a.shape[-1]) @ b).reshape(a.shape[:-1] + (b.shape[1],))
    return np.matmul(a, b)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    sa, sb = a.shape, b.shape

    def back(g):
        ga = sum_to(matmul(g, swap_last(b)), sa)
        if len(sa) > 2 and len(sb) == 2:
            flat_a = reshape(a, (-1, sa[-1]))
            return ga, matmul(swap_last(flat_a), reshape(g, (-1, sb[-1])))
        return ga, sum_to(matmul(swap_last(a), g), sb)

    return _make(_mm(a.data, b.data), (a, b), back, "matmul")


class IndexMap:
    """A fixed gather pattern over the flattened trailing dimensions of a batch.

    ``idx`` holds source positions in ``[0, in_size)``; ``-1`` entries read a
    zero.  Convolutions (im2col with zero padding) and nearest-neighbour
    upsampling are both expressed this way, which keeps their gradients (and
    the gradients of those gradients) exact and cheap.
    """

    def __init__(self, idx: np.ndarray, in_size: int):
        self.idx = np.asarray(idx, dtype=np.int64)
        self.in_size = int(in_size)
        flat = self.idx.ravel()
        if flat.size and (flat.max() >= in_size or flat.min() < -1):
            raise ShapeError("IndexMap: index out of range")
        self._safe = np.where(self.idx < 0, in_size, self.idx)
        rows = np.nonzero(flat >= 0)[0]
        # scatter matrix of shape (in_size, out_size)
        self._scatter = sparse.csr_matrix(
            (np.ones(rows.size), (flat[rows], rows)), shape=(in_size, flat.size))

    @property
    def out_shape(self) -> tuple[int, ...]:
        return self.idx.shape


def gather(x, imap: IndexMap) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] != imap.in_size:
        raise ShapeError(f"gather: expected (batch, {imap.in_size}) input, got {x.shape}")
    padded = np.concatenate([x.data, np.zeros((x.shape[0], 1))], axis=1)
    data = padded[:, imap._safe]
    return _make(data, (x,), lambda g: (scatter(g, imap),), "gather")


def scatter(g, imap: IndexMap) -> Tensor:
    g = as_tensor(g)
    batch = g.shape[0]
    flat = g.data.reshape(batch, -1)
    data = np.asarray((imap._scatter @ flat.T).T)
    return _make(data, (g,), lambda h: (gather(h, imap),), "scatter")


# --------------------------------------------------------------------------
# losses


def bce_with_logits(logits, targets) -> Tensor:
    """Mean binary cross-entropy of sigmoid(logits) against 0/1 targets."""
    logits, targets = as_tensor(logits), as_tensor(targets)
    if logits.shape != targets.shape:
        raise ShapeError(f"bce_with_logits: logits {logits.shape} vs targets {targets.shape}")
    return mean(sub(softplus(logits), mul(targets, logits)))


# --------------------------------------------------------------------------
# optimizer


class Adam:
    """Standard Adam with bias correction."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Sequence[np.ndarray] | None = None) -> None:
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        if len(grads) != len(self.params):
            raise ShapeError(f"adam: {len(grads)} gradients for {len(self.params)} parameters")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            g = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=DTYPE)
            if g.shape != p.shape:
                raise ShapeError(f"adam: gradient shape {g.shape} != parameter shape {p.shape}")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / c1
            v_hat = self.v[i] / c2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if not np.all(np.isfinite(p.data)):
                raise FloatingPointError(f"adam: parameter {i} became non-finite at step {t}")

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named arrays plus JSON metadata into a single ``.npz`` container."""
    header = {"format_version": CHECKPOINT_VERSION, "names": sorted(tensors),
              "shapes": {k: list(np.shape(v)) for k, v in tensors.items()}, "meta": meta or {}}
    arrays = {f"t::{k}": np.asarray(v) for k, v in tensors.items()}
    arrays["__header__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(Path(path), allow_pickle=False) as z:
        if "__header__" not in z.files:
            raise ValueError(f"{path}: not a checkpoint (missing header)")
        header = json.loads(bytes(z["__header__"]).decode())
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
        tensors = {k: z[f"t::{k}"].copy() for k in header["names"]}
    for k, shape in header["shapes"].items():
        if list(tensors[k].shape) != shape:
            raise ValueError(f"{path}: tensor {k} has shape {tensors[k].shape}, header says {shape}")
    return tensors, header["meta"]
