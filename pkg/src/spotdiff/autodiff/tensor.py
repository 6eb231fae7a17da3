"""Dense N-dimensional tensors with reverse-mode automatic differentiation.

The design is a classic tape: every operation returns a new Tensor holding
a closure that, given the output gradient, pushes gradient contributions to
its parents. ``backward`` topologically sorts the graph reachable from a
scalar loss and runs each closure exactly once; fan-out accumulates
additively. Subgraphs whose leaves all have ``requires_grad=False`` never
record closures, so frozen-backbone training and sampling skip that work
automatically.

Dtype follows the inputs (float32 by default, float64 for gradient-check
work); no implicit casts between the two.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable

import numpy as np

from ..errors import ContractError, DimensionError

_GRAD_ENABLED = True
_FINITE_CHECKS = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (sampling, evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def finite_checks(enabled: bool):
    global _FINITE_CHECKS
    prev = _FINITE_CHECKS
    _FINITE_CHECKS = enabled
    try:
        yield
    finally:
        _FINITE_CHECKS = prev


class Tensor:
    """A numpy array plus the bookkeeping needed for reverse-mode autodiff.

    ``data`` is the value, ``grad`` (populated by ``backward``) matches its
    shape. ``tag`` is an optional parameter-partition label ("backbone" /
    "adapter") used by the freeze contract.
    """

    __slots__ = ("data", "requires_grad", "grad", "tag", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.tag: str | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def values(self) -> np.ndarray:
        """Flat little-endian-ordered view of the payload (C order)."""
        return self.data.reshape(-1)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        out = Tensor(self.data)
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    # -- graph construction --------------------------------------------

    def backward(self) -> None:
        """Accumulate gradients of this scalar onto every requires_grad leaf.

        Traverses each node exactly once in reverse topological order.
        """
        if self.data.size != 1:
            raise ContractError("backward() requires a scalar loss tensor")
        order = _toposort(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is not None:
                node._backward_into(g, grads)
            elif node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g

    def _backward_into(self, g: np.ndarray, grads: dict[int, np.ndarray]) -> None:
        contribs = self._backward(g)
        for parent, contrib in zip(self._parents, contribs):
            if contrib is None or not parent.requires_grad:
                continue
            if parent._backward is None:
                # leaf: write through to .grad
                parent.grad = contrib if parent.grad is None else parent.grad + contrib
            else:
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + contrib
                else:
                    grads[key] = contrib


def _toposort(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def make_op(
    data: np.ndarray,
    parents: Iterable[Tensor],
    backward: Callable[[np.ndarray], tuple],
) -> Tensor:
    """Wrap an op result; records the tape entry only when some parent needs it."""
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise ContractError("non-finite values produced by a forward operation")
    parents = tuple(parents)
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._parents = parents
        out._backward = backward
    return out


def _same_shape(a: Tensor, b: Tensor, opname: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{opname}: shape mismatch {a.shape} vs {b.shape}")


# -- elementwise and linear algebra -------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return make_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return make_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return make_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return make_op(a.data * c, (a,), lambda g: (g * c,))


def add_const(a: Tensor, c) -> Tensor:
    return make_op(a.data + np.asarray(c, dtype=a.dtype), (a,), lambda g: (g,))


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def square(a: Tensor) -> Tensor:
    return make_op(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def absolute(a: Tensor) -> Tensor:
    # subgradient 0 at exactly 0
    s = np.sign(a.data)
    return make_op(np.abs(a.data), (a,), lambda g: (g * s,))


def silu(a: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-a.data))
    out = a.data * sig
    # d/dx x*sig(x) = sig(x) * (1 + x * (1 - sig(x)))
    return make_op(out, (a,), lambda g: (g * sig * (1.0 + a.data * (1.0 - sig)),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return make_op(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Bias add: (N, D) + (D,) or (N, C, H, W) + (C,)."""
    if x.data.ndim == 2 and b.shape == (x.shape[1],):
        return make_op(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))
    if x.data.ndim == 4 and b.shape == (x.shape[1],):
        return make_op(
            x.data + b.data[None, :, None, None],
            (x, b),
            lambda g: (g, g.sum(axis=(0, 2, 3))),
        )
    raise DimensionError(f"add_bias: shapes {x.shape} + {b.shape} not supported")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b); x is (N, D_in), w is (D_in, D_out)."""
    out = matmul(x, w)
    if b is not None:
        out = add_bias(out, b)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    orig = a.shape
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ContractError("concat of an empty list")
    ndim = tensors[0].data.ndim
    for t in tensors[1:]:
        if t.data.ndim != ndim:
            raise DimensionError("concat: rank mismatch")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


# -- reductions ----------------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    return make_op(
        np.asarray(a.data.sum(), dtype=a.dtype).reshape(()),
        (a,),
        lambda g: (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),),
    )


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return make_op(
        np.asarray(a.data.mean(), dtype=a.dtype).reshape(()),
        (a,),
        lambda g: ((np.broadcast_to(g, a.shape) / n).astype(a.dtype, copy=True),),
    )


def mean_per_sample(a: Tensor) -> Tensor:
    """Mean over all axes except the first; (N, ...) -> (N,)."""
    if a.data.ndim < 2:
        raise DimensionError("mean_per_sample needs rank >= 2")
    axes = tuple(range(1, a.data.ndim))
    n = int(np.prod(a.shape[1:]))
    expand = (slice(None),) + (None,) * (a.data.ndim - 1)

    def backward(g):
        return ((np.broadcast_to(g[expand], a.shape) / n).astype(a.dtype, copy=True),)

    return make_op(a.data.mean(axis=axes), (a,), backward)


def dot_const(a: Tensor, w: np.ndarray) -> Tensor:
    """Weighted sum with a constant vector: (N,) . (N,) -> scalar."""
    w = np.asarray(w, dtype=a.dtype)
    if a.shape != w.shape:
        raise DimensionError(f"dot_const: {a.shape} vs {w.shape}")
    return make_op(
        np.asarray(a.data @ w).reshape(()),
        (a,),
        lambda g: (g * w,),
    )


# -- constructors --------------------------------------------------------


def zeros(shape, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def param(data, tag: str, dtype=None) -> Tensor:
    """A leaf parameter with a partition tag."""
    t = Tensor(np.array(data, dtype=dtype, copy=True), requires_grad=True)
    t.tag = tag
    return t
