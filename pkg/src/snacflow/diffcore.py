"""Dense float64 tensors with reverse-mode differentiation.

Every tensor is an immutable wrapper around a ``numpy`` array. Operations
record their parents and a closure that maps the output cotangent back to
the parents, so :func:`gradient` can replay the graph backwards.

Elementwise operations accept operands of equal shape, a scalar, or an
operand whose shape is a trailing suffix of the other (the bias-row case,
``(N, k)`` against ``(k,)``). Anything else is a :class:`ShapeError`.
"""

from __future__ import annotations

from collections.abc import Callable, Iterator, Mapping
from typing import Union

import numpy as np

from .errors import NonFiniteError, ShapeError

ArrayLike = Union["Tensor", np.ndarray, float, int]


def _finite_array(data, what: str) -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{what}: input contains NaN or Inf")
    arr.setflags(write=False)
    return arr


class Tensor:
    """Immutable float64 array node in a differentiation graph."""

    __slots__ = ("data", "op", "_parents", "_backward")

    def __init__(self, data, *, op: str = "const", _parents=(), _backward=None,
                 _checked: bool = False):
        if _checked:
            data.setflags(write=False)
            self.data = data
        else:
            self.data = _finite_array(data, op)
        self.op = op
        self._parents: tuple[Tensor, ...] = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    # operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(op: str, out: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"non-finite result in op '{op}' "
                             f"(input shapes {[p.shape for p in parents]})")
    return Tensor(out, op=op, _parents=parents, _backward=backward, _checked=True)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    sa, sb = a.shape, b.shape
    if sa == sb:
        return sa
    if len(sa) >= len(sb) and sa[len(sa) - len(sb):] == sb:
        return sa
    if len(sb) > len(sa) and sb[len(sb) - len(sa):] == sa:
        return sb
    raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad


# ---------------------------------------------------------------- elementwise

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _node("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _node("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _node("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def backward(g):
        ga = g / b.data
        return (_unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape))

    return _node("div", out, (a, b), backward)


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _node("neg", -a.data, (a,), lambda g: (-g,))


def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _node("exp", out, (a,), lambda g: (g * out,))


def log(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _node("log", out, (a,), lambda g: (g / a.data,))


def tanh(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def square(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _node("square", a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


# ---------------------------------------------------------------- linear algebra

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product of a ``(N, k)`` or ``(k,)`` operand with ``(k, m)``."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def backward(g):
        if a.ndim == 1:
            return g @ b.data.T, np.outer(a.data, g)
        return g @ b.data.T, a.data.T @ g

    return _node("matmul", out, (a, b), backward)


# ---------------------------------------------------------------- channel axis

def slice_channels(a: ArrayLike, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    width = a.shape[-1] if a.ndim else 0
    if not 0 <= start <= stop <= width:
        raise ShapeError(f"slice: range [{start}:{stop}] invalid for shape {a.shape}")
    out = a.data[..., start:stop].copy()

    def backward(g):
        full = np.zeros(a.shape)
        full[..., start:stop] = g
        return (full,)

    return _node("slice", out, (a,), backward)


def concat_channels(*parts: ArrayLike) -> Tensor:
    ts = tuple(as_tensor(p) for p in parts)
    lead = {t.shape[:-1] for t in ts}
    if len(lead) != 1 or any(t.ndim == 0 for t in ts):
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}")
    out = np.concatenate([t.data for t in ts], axis=-1)
    bounds = np.cumsum([0] + [t.shape[-1] for t in ts])

    def backward(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(ts)))

    return _node("concat", out, ts, backward)


def reverse_channels(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    if a.ndim == 0:
        raise ShapeError("reverse: scalar has no channel axis")
    return _node("reverse", a.data[..., ::-1].copy(), (a,),
                 lambda g: (g[..., ::-1],))


# ---------------------------------------------------------------- reductions

def reduce_sum(a: ArrayLike, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis))

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node("sum", out, (a,), backward)


def reduce_mean(a: ArrayLike, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return mul(reduce_sum(a, axis), 1.0 / count)


# ---------------------------------------------------------------- parameters

class ParamSet(Mapping):
    """Named float64 arrays iterated in lexicographic name order."""

    def __init__(self, items: Mapping[str, np.ndarray] | None = None):
        self._data: dict[str, np.ndarray] = {}
        for name in sorted(items or {}):
            arr = np.array(items[name], dtype=np.float64)
            arr.setflags(write=False)
            self._data[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._data[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def __repr__(self) -> str:
        return f"ParamSet({len(self)} tensors, {self.size} scalars)"

    @property
    def size(self) -> int:
        return sum(v.size for v in self._data.values())

    def replace(self, **updates: np.ndarray) -> ParamSet:
        merged = dict(self._data)
        for name, value in updates.items():
            if name not in merged:
                raise KeyError(name)
            if np.shape(value) != merged[name].shape:
                raise ShapeError(f"replace: {name} has shape {merged[name].shape}, "
                                 f"got {np.shape(value)}")
            merged[name] = value
        return ParamSet(merged)

    def map(self, fn: Callable[[str, np.ndarray], np.ndarray]) -> ParamSet:
        return ParamSet({k: fn(k, v) for k, v in self._data.items()})

    def equal(self, other: ParamSet) -> bool:
        """Bitwise equality of names, shapes and values."""
        return list(self) == list(other) and all(
            self[k].shape == other[k].shape and np.array_equal(self[k], other[k])
            for k in self)


LossFn = Callable[[Mapping[str, Tensor]], Tensor]


def backward(root: Tensor, leaves: Mapping[str, Tensor]) -> ParamSet:
    """Propagate d(root)/d(node) through the graph and collect leaf gradients."""
    if root.shape != ():
        raise ShapeError(f"backward: loss must be scalar, got shape {root.shape}")
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
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(root): np.ones(())}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None or node._backward is None:
            if g is not None:
                grads[id(node)] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    out = {}
    for name, leaf in leaves.items():
        g = grads.get(id(leaf))
        out[name] = np.zeros(leaf.shape) if g is None else np.asarray(g, dtype=np.float64)
        if not np.all(np.isfinite(out[name])):
            raise NonFiniteError(f"non-finite gradient for parameter '{name}'")
    return ParamSet(out)


def value_and_gradient(loss: LossFn, params: ParamSet) -> tuple[float, ParamSet]:
    leaves = {name: Tensor(params[name], op=f"param:{name}") for name in params}
    root = as_tensor(loss(leaves))
    return root.item(), backward(root, leaves)


def gradient(loss: LossFn, params: ParamSet) -> ParamSet:
    """Exact d(loss)/d(p) for every named tensor in ``params``.

    ``loss`` receives a mapping of parameter tensors and must return a
    scalar :class:`Tensor` built from the operations in this module.

    >>> ps = ParamSet({"p": np.array([3.0])})
    >>> gradient(lambda t: reduce_sum(square(t["p"])), ps)["p"]
    array([6.])
    """
    return value_and_gradient(loss, params)[1]


def evaluate(loss: LossFn, params: ParamSet) -> float:
    return as_tensor(loss({k: Tensor(v, op=f"param:{k}", _checked=True)
                           for k, v in params.items()})).item()


def finite_diff_check(
    loss: LossFn,
    params: ParamSet,
    step: float = 1e-5,
    *,
    n_samples: int | None = None,
    seed: int = 0,
) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    The relative error for one scalar is
    ``|a - n| / max(|a|, |n|, 1e-8)``. With ``n_samples`` set, only that many
    scalar coordinates (drawn without replacement by a seeded generator) are
    probed; otherwise every coordinate is.
    """
    if not step > 0:
        raise ValueError(f"finite_diff_check: step must be > 0, got {step}")
    analytic = gradient(loss, params)
    coords = [(name, idx) for name in params for idx in np.ndindex(params[name].shape)]
    if n_samples is not None and n_samples < len(coords):
        rng = np.random.default_rng(seed)
        picks = rng.choice(len(coords), size=n_samples, replace=False)
        coords = [coords[i] for i in sorted(picks)]

    worst = 0.0
    for name, idx in coords:
        base = params[name]
        plus, minus = base.copy(), base.copy()
        plus[idx] += step
        minus[idx] -= step
        numeric = (evaluate(loss, params.replace(**{name: plus}))
                   - evaluate(loss, params.replace(**{name: minus}))) / (2.0 * step)
        a = float(analytic[name][idx])
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
