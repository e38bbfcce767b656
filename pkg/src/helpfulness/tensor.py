"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation here takes and returns :class:`Tensor` objects. When any input
requires a gradient, the result records its parents and a closure mapping the
upstream gradient to one gradient per parent. :func:`backward` walks that graph
in reverse topological order.

Operations accept arbitrary leading batch dimensions wherever the model needs
them (``[..., n, l]`` sequences), so a padded mini-batch runs as one graph.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    ContractError,
    DegenerateInputError,
    DimensionError,
    NumericError,
    SequenceTooShortError,
)

RngStream = np.random.Generator


def rng_stream(seed: int) -> RngStream:
    """Deterministic generator; identical seeds give identical draw sequences."""
    return np.random.Generator(np.random.PCG64(seed))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _lift(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Iterable[Tensor], backward_fn) -> Tensor:
    parents = tuple(parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor in ``loss``'s graph that requires one.

    Gradients accumulate additively: calling this twice on the same graph without
    clearing doubles every gradient.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor requiring a gradient")
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.grad is not None:
            node.grad = node.grad + g
        else:
            node.grad = g if node._backward is not None else g.copy()
        if node._backward is None:
            if not np.all(np.isfinite(node.grad)):
                raise NumericError(f"non-finite gradient reached {node!r}")
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg


# -- elementwise -------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from exc

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(out, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(out, (a, b), grad_fn)


def scale(x: Tensor, factor: float) -> Tensor:
    return _result(x.data * factor, (x,), lambda g: (g * factor,))


def relu(x: Tensor) -> Tensor:
    """Elementwise ``max(0, x)``; the subgradient at 0 is 0."""
    positive = x.data > 0
    return _result(np.where(positive, x.data, 0.0), (x,), lambda g: (g * positive,))


def sum_all(x: Tensor) -> Tensor:
    return _result(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


# -- shape ---------------------------------------------------------------------


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    return _result(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    try:
        out = np.concatenate(datas, axis=axis)
    except ValueError as exc:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise DimensionError(f"cannot concatenate shapes {shapes} on axis {axis}") from exc
    bounds = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def grad_fn(g):
        return np.split(g, bounds, axis=axis)

    return _result(out, tensors, grad_fn)


def take_rows(table: Tensor, ids: np.ndarray, frozen_row: Optional[int] = None) -> Tensor:
    """Gather ``table[ids]``. Gradient never reaches ``frozen_row`` (the PAD row)."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError(f"ids outside [0, {table.shape[0]}) for table shape {table.shape}")

    def grad_fn(g):
        flat_ids = ids.reshape(-1)
        flat_g = g.reshape(-1, table.shape[1])
        if frozen_row is not None:
            keep = flat_ids != frozen_row
            flat_ids, flat_g = flat_ids[keep], flat_g[keep]
        out = np.zeros_like(table.data)
        np.add.at(out, flat_ids, flat_g)
        return (out,)

    return _result(table.data[ids], (table,), grad_fn)


# -- linear algebra ----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, batched over leading axes.

    A 1-D ``b`` of length k is treated as a ``[k x 1]`` column with the trailing
    axis dropped, so ``[..., k] @ [k] -> [...]``.
    """
    if a.data.ndim < 1 or b.data.ndim < 1 or a.shape[-1] != b.shape[-2 if b.data.ndim > 1 else 0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    out = np.matmul(a.data, b.data)

    if b.data.ndim == 1:
        def grad_fn(g):
            ga = g[..., None] * b.data
            gb = np.tensordot(g, a.data, axes=(range(g.ndim), range(g.ndim)))
            return ga, gb
    elif a.data.ndim > 2 and b.data.ndim == 2:
        # shared weight: fold the batch axes into one 2-D product
        k, n = b.shape

        def grad_fn(g):
            ga = np.matmul(g, b.data.T)
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            return ga, gb
    else:
        def grad_fn(g):
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(out, (a, b), grad_fn)


def softmax_rows(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax along the last axis. ``mask`` (broadcastable bool, True = keep)
    gives masked-out entries exactly zero weight."""
    if mask is None:
        shifted = x.data - x.data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not np.all(mask.any(axis=-1)):
            raise DegenerateInputError("softmax row has every entry masked out")
        filled = np.where(mask, x.data, -np.inf)
        shifted = filled - filled.max(axis=-1, keepdims=True)
        e = np.where(mask, np.exp(shifted), 0.0)
    y = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), grad_fn)


# -- network layers ------------------------------------------------------------


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Valid 1-D convolution over the position axis.

    ``x`` is ``[..., n, l]``, ``kernels`` is ``[width, l, c]``, ``bias`` is ``[c]``.
    Each filter spans the full embedding width, giving ``[..., n - width + 1, c]``.
    """
    width, l_k, c = kernels.shape
    n, l = x.shape[-2], x.shape[-1]
    if l != l_k or bias.shape != (c,):
        raise DimensionError(
            f"conv1d shapes disagree: input {x.shape}, kernels {kernels.shape}, bias {bias.shape}"
        )
    if n < width:
        raise SequenceTooShortError(f"sequence of length {n} is shorter than filter width {width}")
    p = n - width + 1
    out = np.broadcast_to(bias.data, x.shape[:-2] + (p, c)).copy()
    for k in range(width):
        out += np.matmul(x.data[..., k:k + p, :], kernels.data[k])

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        gk = np.zeros_like(kernels.data)
        g2 = g.reshape(-1, c)
        for k in range(width):
            gx[..., k:k + p, :] += np.matmul(g, kernels.data[k].T)
            gk[k] = x.data[..., k:k + p, :].reshape(-1, l).T @ g2
        return gx, gk, g2.sum(axis=0)

    return _result(out, (x, kernels, bias), grad_fn)


def pool_positions(x: Tensor, mode: str, mask: Optional[np.ndarray] = None) -> Tensor:
    """Reduce ``[..., p, c]`` over positions to ``[..., c]`` by max or mean.

    ``mask`` (``[..., p]``, True = real position) excludes padded positions: max
    treats them as -inf, avg divides by the count of real positions. Max ties
    send the gradient to the earliest position.
    """
    if mode not in ("max", "avg"):
        raise ConfigurationError(f"unknown pooling mode {mode!r}")
    if x.data.ndim < 2 or x.shape[-2] == 0:
        raise DegenerateInputError(f"nothing to pool in shape {x.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape[:-1]:
            raise DimensionError(f"pool mask shape {mask.shape} does not match {x.shape[:-1]}")
        if not np.all(mask.any(axis=-1)):
            raise DegenerateInputError("pooling over a fully masked position axis")

    if mode == "max":
        source = x.data if mask is None else np.where(mask[..., None], x.data, -np.inf)
        idx = np.argmax(source, axis=-2)[..., None, :]
        out = np.take_along_axis(x.data, idx, axis=-2)[..., 0, :]

        def grad_fn(g):
            gx = np.zeros_like(x.data)
            np.put_along_axis(gx, idx, g[..., None, :], axis=-2)
            return (gx,)

        return _result(out, (x,), grad_fn)

    if mask is None:
        weights = np.full(x.shape[:-1], 1.0 / x.shape[-2])
        out = x.data.mean(axis=-2)
    else:
        weights = mask / mask.sum(axis=-1, keepdims=True)
        out = np.where(mask[..., None], x.data, 0.0).sum(axis=-2) / mask.sum(axis=-1)[..., None]
    return _result(out, (x,), lambda g: (g[..., None, :] * weights[..., None],))


def dropout(x: Tensor, rate: float, rng: RngStream, training: bool) -> Tensor:
    """Inverted dropout: zero each element with probability ``rate`` and scale
    survivors by ``1 / (1 - rate)``. Identity when not training."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _result(x.data * keep, (x,), lambda g: (g * keep,))


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error; gradient ``2 (pred - target) / b``."""
    target_data = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != target_data.shape:
        raise DimensionError(f"mse_loss shapes differ: {pred.shape} vs {target_data.shape}")
    diff = pred.data - target_data
    b = diff.size
    out = np.array(np.mean(diff * diff))
    parents = (pred, target) if isinstance(target, Tensor) else (pred,)

    def grad_fn(g):
        gp = g * 2.0 * diff / b
        return (gp, -gp) if len(parents) == 2 else (gp,)

    return _result(out, parents, grad_fn)
