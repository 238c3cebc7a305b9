"""Dense-array reverse-mode automatic differentiation with nesting.

Every primitive records its parents and a vector-Jacobian rule written in
terms of other primitives, so a backward pass run with ``create_graph=True``
is itself recorded and can be differentiated again (reverse-over-reverse).

Nodes carry a monotonically increasing creation id.  Parents always have a
smaller id than their children, so sorting the reachable nodes by id gives a
deterministic topological order without an explicit tape object.
"""

from __future__ import annotations

import itertools
import math
import threading
import warnings
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

__all__ = [
    "Tensor",
    "tensor",
    "constant",
    "no_grad",
    "grad_enabled",
    "grad",
    "UnreachableGradientWarning",
    "NonFiniteError",
    "exp",
    "log",
    "sin",
    "cos",
    "sqrt",
    "ndtr",
    "gelu",
    "cos_sqrt",
    "einsum",
    "matmul",
    "concat",
    "stack",
    "take",
    "segment_sum",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "broadcast_to",
    "check_finite",
]

_ids = itertools.count()
_state = threading.local()

_SQRT_2PI = math.sqrt(2.0 * math.pi)


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


class UnreachableGradientWarning(UserWarning):
    """A ``wrt`` tensor has no path to the differentiated output."""


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@contextmanager
def _grad_mode(flag: bool):
    prev = grad_enabled()
    _state.enabled = flag
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """A node in the computation graph holding a float64 array."""

    __slots__ = ("data", "requires_grad", "parents", "vjp", "id", "name", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.parents: tuple[Tensor, ...] = ()
        self.vjp: Callable | None = None
        self.id = next(_ids)
        self.name = name

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

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

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def constant(data) -> Tensor:
    if isinstance(data, Tensor):
        return data
    return Tensor(data)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Wrap a primitive's result, recording it only if a parent needs grad."""
    out = Tensor.__new__(Tensor)
    out.data = value
    out.id = next(_ids)
    out.name = None
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.vjp = vjp
    else:
        out.requires_grad = False
        out.parents = ()
        out.vjp = None
    return out


def check_finite(value, what: str = "value") -> None:
    arr = value.data if isinstance(value, Tensor) else np.asarray(value)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite entries in {what}")


def _unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    axes = list(range(lead))
    for i, s in enumerate(shape):
        if s == 1 and g.shape[lead + i] != 1:
            axes.append(lead + i)
    out = sum(g, axis=tuple(axes), keepdims=False) if axes else g
    return reshape(out, shape)


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise binary ------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data, "add")

    def vjp(g, needs):
        return (_unbroadcast(g, a.shape) if needs[0] else None,
                _unbroadcast(g, b.shape) if needs[1] else None)

    return _node(a.data + b.data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")

    def vjp(g, needs):
        return (_unbroadcast(g, a.shape) if needs[0] else None,
                _unbroadcast(neg(g), b.shape) if needs[1] else None)

    return _node(a.data - b.data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")

    def vjp(g, needs):
        return (_unbroadcast(mul(g, b), a.shape) if needs[0] else None,
                _unbroadcast(mul(g, a), b.shape) if needs[1] else None)

    return _node(a.data * b.data, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.data, b.data, "div")
    if np.any(b.data == 0.0):
        raise ZeroDivisionError("division by zero in autodiff div")
    out_data = a.data / b.data

    def vjp(g, needs):
        ga = gb = None
        if needs[0]:
            ga = _unbroadcast(div(g, b), a.shape)
        if needs[1]:
            gb = _unbroadcast(neg(div(mul(g, a), mul(b, b))), b.shape)
        return ga, gb

    return _node(out_data, (a, b), vjp)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _node(-a.data, (a,), lambda g, needs: (neg(g),))


def power(a, p) -> Tensor:
    """``a ** p`` for a constant real exponent ``p``."""
    a = _as_tensor(a)
    if isinstance(p, Tensor):
        if p.requires_grad:
            raise TypeError("differentiable exponents are not supported; use exp(p * log(a))")
        p = float(p.data)
    p = float(p)
    integral = p == math.floor(p)
    if not integral and np.any(a.data < 0.0):
        raise ValueError(f"pow of negative base with non-integer exponent {p}")
    if p < 0 and np.any(a.data == 0.0):
        raise ZeroDivisionError(f"pow of zero base with negative exponent {p}")
    if p == 2.0:
        out_data = a.data * a.data
    else:
        out_data = np.power(a.data, p)

    def vjp(g, needs):
        if p == 0.0:
            return (mul(g, 0.0),)
        if p == 1.0:
            return (g,)
        if p == 2.0:
            return (mul(g, mul(a, 2.0)),)
        return (mul(g, mul(power(a, p - 1.0), p)),)

    return _node(out_data, (a,), vjp)


# -- elementwise unary -------------------------------------------------

def exp(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        out_data = np.exp(a.data)
    if not np.all(np.isfinite(out_data)):
        raise NonFiniteError("exp overflow")
    out: Tensor

    def vjp(g, needs):
        return (mul(g, out),)

    out = _node(out_data, (a,), vjp)
    return out


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0.0):
        raise ValueError("log of non-positive value")
    return _node(np.log(a.data), (a,), lambda g, needs: (div(g, a),))


def sin(a) -> Tensor:
    a = _as_tensor(a)
    return _node(np.sin(a.data), (a,), lambda g, needs: (mul(g, cos(a)),))


def cos(a) -> Tensor:
    a = _as_tensor(a)
    return _node(np.cos(a.data), (a,), lambda g, needs: (neg(mul(g, sin(a))),))


def sqrt(a) -> Tensor:
    return power(a, 0.5)


def _ndtr_np(x: np.ndarray) -> np.ndarray:
    from scipy.special import ndtr as _ndtr

    return _ndtr(x)


def ndtr(a) -> Tensor:
    """Standard normal CDF; derivative is the normal density."""
    a = _as_tensor(a)

    def vjp(g, needs):
        density = mul(exp(mul(mul(a, a), -0.5)), 1.0 / _SQRT_2PI)
        return (mul(g, density),)

    return _node(_ndtr_np(a.data), (a,), vjp)


def gelu(a) -> Tensor:
    """Exact GeLU ``x * Phi(x)``."""
    a = _as_tensor(a)
    return mul(a, ndtr(a))


# cos(pi*sqrt(s)) is entire in s; its Taylor series avoids the sqrt
# singularity at s = 0 for every derivative order.
_COS_SQRT_TERMS = 34
_COS_SQRT_MAX = 4.0


def _cos_sqrt_coeffs(order: int) -> np.ndarray:
    n = np.arange(order, order + _COS_SQRT_TERMS)
    coeffs = np.empty(_COS_SQRT_TERMS)
    for j, nn in enumerate(n):
        c = (-1.0) ** nn * math.pi ** (2 * nn) / math.factorial(2 * nn)
        c *= math.factorial(nn) / math.factorial(nn - order)
        coeffs[j] = c
    return coeffs


_cos_sqrt_cache: dict[int, np.ndarray] = {}


def cos_sqrt(s, order: int = 0) -> Tensor:
    """``d^order/ds^order cos(pi * sqrt(s))`` for ``0 <= s <= 4``."""
    s = _as_tensor(s)
    if np.any(s.data < 0.0) or np.any(s.data > _COS_SQRT_MAX):
        raise ValueError("cos_sqrt argument outside [0, 4]")
    coeffs = _cos_sqrt_cache.get(order)
    if coeffs is None:
        coeffs = _cos_sqrt_cache[order] = _cos_sqrt_coeffs(order)
    x = s.data
    val = np.full_like(x, coeffs[-1])
    for c in coeffs[-2::-1]:
        val = val * x + c
    return _node(val, (s,), lambda g, needs: (mul(g, cos_sqrt(s, order + 1)),))


# -- contractions --------------------------------------------------------

def _parse_einsum(spec: str) -> tuple[str, str, str]:
    lhs, out = spec.replace(" ", "").split("->")
    a, b = lhs.split(",")
    for operand in (a, b, out):
        if len(set(operand)) != len(operand):
            raise ValueError(f"einsum: repeated index in {spec!r}")
    for idx in a:
        if idx not in b and idx not in out:
            raise ValueError(f"einsum: index {idx!r} of first operand is reduced alone")
    for idx in b:
        if idx not in a and idx not in out:
            raise ValueError(f"einsum: index {idx!r} of second operand is reduced alone")
    return a, b, out


def einsum(spec: str, a, b) -> Tensor:
    """Two-operand einsum whose adjoint is again a two-operand einsum."""
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb, so = _parse_einsum(spec)
    if len(sa) != a.ndim or len(sb) != b.ndim:
        raise ValueError(f"einsum {spec!r}: operand ranks {a.ndim}, {b.ndim} do not match")
    dims: dict[str, int] = {}
    for s, arr in ((sa, a.data), (sb, b.data)):
        for idx, n in zip(s, arr.shape):
            if dims.setdefault(idx, n) != n:
                raise ValueError(f"einsum {spec!r}: size mismatch on index {idx!r}")
    out_data = np.einsum(spec, a.data, b.data, optimize=True)

    def vjp(g, needs):
        ga = einsum(f"{so},{sb}->{sa}", g, b) if needs[0] else None
        gb = einsum(f"{so},{sa}->{sb}", g, a) if needs[1] else None
        return ga, gb

    return _node(np.asarray(out_data, dtype=np.float64), (a, b), vjp)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands; use einsum for batches")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")

    def vjp(g, needs):
        ga = matmul(g, transpose(b)) if needs[0] else None
        gb = matmul(transpose(a), g) if needs[1] else None
        return ga, gb

    return _node(a.data @ b.data, (a, b), vjp)


# -- reductions and shape ops -------------------------------------------

def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = _as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out_data = np.sum(a.data, axis=axes, keepdims=keepdims) if axes else a.data.copy()
    kept_shape = tuple(1 if i in axes else n for i, n in enumerate(a.shape))

    def vjp(g, needs):
        return (broadcast_to(reshape(g, kept_shape), a.shape),)

    return _node(np.asarray(out_data, dtype=np.float64), (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    if count == 0:
        raise ValueError("mean over an empty axis")
    return mul(sum(a, axis=axes, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(int(s) for s in shape)
    orig = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g, needs: (reshape(g, orig),))


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(int(x) for x in axes)
    inverse = tuple(np.argsort(axes))
    return _node(np.transpose(a.data, axes), (a,), lambda g, needs: (transpose(g, inverse),))


def broadcast_to(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    orig = a.shape
    data = np.broadcast_to(a.data, shape)
    return _node(data, (a,), lambda g, needs: (_unbroadcast(g, orig),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat of an empty list")
    axis = axis % ts[0].ndim
    try:
        out_data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ValueError(f"concat: {exc}") from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def vjp(g, needs):
        grads = []
        for i, need in enumerate(needs):
            if not need:
                grads.append(None)
                continue
            index = [slice(None)] * g.ndim
            index[axis] = slice(int(bounds[i]), int(bounds[i + 1]))
            grads.append(getitem(g, tuple(index)))
        return tuple(grads)

    return _node(out_data, ts, vjp)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    expanded = []
    for t in ts:
        ax = axis % (t.ndim + 1)
        shape = t.shape[:ax] + (1,) + t.shape[ax:]
        expanded.append(reshape(t, shape))
    return concat(expanded, axis=axis)


def _scatter(g: Tensor, index, shape: tuple[int, ...]) -> Tensor:
    """Adjoint of basic/advanced indexing: place ``g`` into zeros of ``shape``."""
    out_data = np.zeros(shape)
    np.add.at(out_data, index, g.data)
    return _node(out_data, (g,), lambda gg, needs: (getitem(gg, index),))


def getitem(a, index) -> Tensor:
    a = _as_tensor(a)
    if isinstance(index, Tensor):
        raise TypeError("index with an ndarray, not a Tensor")
    shape = a.shape

    def vjp(g, needs):
        return (_scatter(g, index, shape),)

    return _node(np.asarray(a.data[index], dtype=np.float64), (a,), vjp)


def take(a, indices, axis: int = 0) -> Tensor:
    """Gather along the leading axis; adjoint is :func:`segment_sum`."""
    if axis != 0:
        raise ValueError("take only supports axis=0")
    a = _as_tensor(a)
    idx = np.ascontiguousarray(indices, dtype=np.int64)
    n = a.shape[0]

    def vjp(g, needs):
        return (segment_sum(g, idx, n),)

    return _node(a.data[idx], (a,), vjp)


def segment_sum(a, segment_ids, num_segments: int) -> Tensor:
    """``out[k] = sum_{i : ids[i] == k} a[i]`` along the leading axis."""
    a = _as_tensor(a)
    ids = np.ascontiguousarray(segment_ids, dtype=np.int64)
    if ids.shape[0] != a.shape[0]:
        raise ValueError("segment_sum: ids length does not match leading axis")
    out_data = kernels.segment_sum(a.data, ids, int(num_segments))
    return _node(out_data, (a,), lambda g, needs: (take(g, ids),))


# -- differentiation -----------------------------------------------------

def _collect(output: Tensor) -> list[Tensor]:
    seen: dict[int, Tensor] = {}
    stack_ = [output]
    while stack_:
        node = stack_.pop()
        if node.id in seen or not node.requires_grad:
            continue
        seen[node.id] = node
        stack_.extend(node.parents)
    return sorted(seen.values(), key=lambda t: t.id)


def grad(
    output: Tensor,
    wrt: Tensor | Sequence[Tensor],
    seed=None,
    create_graph: bool = False,
    allow_unused: bool = True,
):
    """Vector-Jacobian products of ``output`` with respect to ``wrt``.

    With ``create_graph=True`` the returned gradients are :class:`Tensor`
    nodes recorded on the graph, so they can be differentiated again.
    Otherwise plain arrays are returned.  A ``wrt`` entry with no path to
    ``output`` yields zeros and an :class:`UnreachableGradientWarning`, or a
    ``ValueError`` when ``allow_unused`` is false.
    """
    single = isinstance(wrt, Tensor)
    targets = [wrt] if single else list(wrt)
    for t in targets:
        if not t.requires_grad:
            raise ValueError("grad: a wrt tensor does not require grad")
    if seed is None:
        seed_t = Tensor(np.ones(output.shape))
    else:
        seed_t = _as_tensor(seed)
        if seed_t.shape != output.shape:
            raise ValueError(f"grad: seed shape {seed_t.shape} != output shape {output.shape}")

    target_ids = {t.id for t in targets}
    order = _collect(output) if output.requires_grad else []
    depends: dict[int, bool] = {}
    for node in order:
        depends[node.id] = node.id in target_ids or any(
            depends.get(p.id, False) for p in node.parents
        )

    grads: dict[int, Tensor] = {}
    if depends.get(output.id, False):
        grads[output.id] = seed_t

    with _grad_mode(create_graph):
        for node in reversed(order):
            g = grads.get(node.id)
            if g is None or node.vjp is None:
                continue
            needs = tuple(depends.get(p.id, False) for p in node.parents)
            if not any(needs):
                continue
            if node.id not in target_ids:
                del grads[node.id]
            contribs = node.vjp(g, needs)
            for parent, need, pg in zip(node.parents, needs, contribs):
                if not need or pg is None:
                    continue
                prev = grads.get(parent.id)
                grads[parent.id] = pg if prev is None else add(prev, pg)

    results = []
    for t in targets:
        g = grads.get(t.id)
        if g is None:
            if not allow_unused:
                raise ValueError("grad: a wrt tensor is not reachable from the output")
            warnings.warn("grad: wrt tensor not reachable; returning zeros",
                          UnreachableGradientWarning, stacklevel=2)
            g = Tensor(np.zeros(t.shape))
        elif g.shape != t.shape:
            g = broadcast_to(g, t.shape) if create_graph else Tensor(np.broadcast_to(g.data, t.shape))
        results.append(g if create_graph else np.array(g.data, dtype=np.float64))
    return results[0] if single else results


def value_and_grad(fn: Callable[..., Tensor], params: Iterable[Tensor], *args, **kwargs):
    params = list(params)
    out = fn(*args, **kwargs)
    return out, grad(out, params)
