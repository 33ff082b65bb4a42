"""Dense reverse-mode automatic differentiation on float64 numpy arrays.

Tensors become differentiable by being watched on a :class:`Tape`. Every
operation whose inputs include a watched (or derived) tensor is appended to
that tape together with its backward rule; :func:`backward` replays the tape
once, in reverse, and stores ``grad`` on every attached tensor.

    tape = Tape()
    w = tape.watch(Tensor(np.ones((3, 2))))
    loss = mean(relu(x @ w))
    backward(loss)
    w.grad  # ndarray with w's shape

Tensors that are not attached to a tape flow through the same operations
as constants, so the forward code used for training also serves plain
evaluation.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

EXP_LIMIT = 700.0


class AutodiffError(Exception):
    """Base class for errors raised by the differentiation core."""


class ShapeError(AutodiffError, ValueError):
    pass


class DomainError(AutodiffError, ValueError):
    pass


class TapeError(AutodiffError, RuntimeError):
    pass


class Tape:
    """Ordered record of operations, consumed by a single :func:`backward`."""

    __slots__ = ("_ops", "_leaves", "consumed")

    def __init__(self) -> None:
        self._ops: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._leaves: list[Tensor] = []
        self.consumed = False

    def __len__(self) -> int:
        return len(self._ops)

    def watch(self, tensor: Tensor | np.ndarray | float) -> Tensor:
        """Return a leaf tensor sharing ``tensor``'s values, attached to this tape."""
        if self.consumed:
            raise TapeError("cannot watch a tensor on a consumed tape")
        data = tensor.data if isinstance(tensor, Tensor) else Tensor(tensor).data
        leaf = Tensor._wrap(data, self)
        self._leaves.append(leaf)
        return leaf


class Tensor:
    """Immutable float64 array, optionally attached to a :class:`Tape`."""

    __slots__ = ("data", "tape", "grad")
    __array_priority__ = 100.0

    def __init__(self, values) -> None:
        data = np.array(values, dtype=np.float64)
        if any(d <= 0 for d in data.shape):
            raise ShapeError(f"dimension sizes must be positive, got {data.shape}")
        data.flags.writeable = False
        self.data = data
        self.tape: Tape | None = None
        self.grad: np.ndarray | None = None

    @classmethod
    def _wrap(cls, data: np.ndarray, tape: Tape | None = None) -> Tensor:
        out = object.__new__(cls)
        if data.flags.writeable:
            data.flags.writeable = False
        out.data = data
        out.tape = tape
        out.grad = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def detach(self) -> Tensor:
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        attached = ", taped" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}{attached})"

    def __len__(self) -> int:
        return self.shape[0]

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> Tensor:
        return transpose(self)


def _not_scalar(t: Tensor):
    raise ShapeError(f"expected a single-element tensor, got shape {t.shape}")


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def apply_op(data: np.ndarray, inputs: Sequence[Tensor], backward_rule: Callable) -> Tensor:
    """Wrap ``data`` as the output of an operation on ``inputs``.

    ``backward_rule(g)`` receives the gradient of the output and returns one
    gradient (or ``None``) per input. The operation is recorded only if some
    input is attached to a tape. Custom operations use the same entry point.
    """
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is None:
                tape = t.tape
            elif t.tape is not tape:
                raise TapeError("inputs are attached to different tapes")
    if tape is None:
        return Tensor._wrap(data)
    if tape.consumed:
        raise TapeError("tape already consumed by backward()")
    out = Tensor._wrap(data, tape)
    tape._ops.append((out, tuple(inputs), backward_rule))
    return out


def backward(output: Tensor) -> None:
    """Populate ``grad`` on every tensor attached to ``output``'s tape.

    The tape is consumed; a second call raises :class:`TapeError`.
    """
    if output.size != 1:
        raise ShapeError(f"backward() needs a scalar output, got shape {output.shape}")
    tape = output.tape
    if tape is None:
        raise TapeError("output is not attached to a tape")
    if tape.consumed:
        raise TapeError("tape already consumed by backward()")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {id(output): np.ones(output.shape)}
    for out, inputs, rule in reversed(tape._ops):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        out.grad = g
        for inp, gi in zip(inputs, rule(g)):
            if gi is None or inp.tape is not tape:
                continue
            key = id(inp)
            prev = grads.get(key)
            grads[key] = gi if prev is None else prev + gi
    for leaf in tape._leaves:
        g = grads.pop(id(leaf), None)
        leaf.grad = np.zeros(leaf.shape) if g is None else np.asarray(g).reshape(leaf.shape)
    tape._ops = []
    tape._leaves = []


# -- shape helpers -----------------------------------------------------------

def _binary_shape(a: tuple, b: tuple, op: str) -> tuple:
    if a == b:
        return a
    if len(a) == len(b) and all(x == y or x == 1 or y == 1 for x, y in zip(a, b)):
        return tuple(max(x, y) for x, y in zip(a, b))
    if int(np.prod(b)) == 1 and len(b) <= len(a):
        return a
    if int(np.prod(a)) == 1 and len(a) <= len(b):
        return b
    raise ShapeError(f"{op}: incompatible shapes {a} and {b}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) < g.ndim:
        return g.sum().reshape(shape)
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def _needs(t: Tensor) -> bool:
    return t.tape is not None


# -- primitives --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return apply_op(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return apply_op(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a.shape, b.shape, "mul")

    def rule(g):
        ga = _unbroadcast(g * b.data, a.shape) if _needs(a) else None
        gb = _unbroadcast(g * a.data, b.shape) if _needs(b) else None
        return ga, gb

    return apply_op(a.data * b.data, (a, b), rule)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a.shape, b.shape, "div")
    if np.any(b.data == 0):
        raise DomainError("div: zero in denominator")
    out = a.data / b.data

    def rule(g):
        ga = _unbroadcast(g / b.data, a.shape) if _needs(a) else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if _needs(b) else None
        return ga, gb

    return apply_op(out, (a, b), rule)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return apply_op(a.data * c, (a,), lambda g: (g * c,))


def neg(a) -> Tensor:
    return scale(a, -1.0)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def rule(g):
        ga = g @ b.data.T if _needs(a) else None
        gb = a.data.T @ g if _needs(b) else None
        return ga, gb

    return apply_op(a.data @ b.data, (a, b), rule)


def add_bias(x, bias) -> Tensor:
    """Add a bias vector of shape ``[D]`` (or ``[1, D]``) to every row of ``x``."""
    x, bias = as_tensor(x), as_tensor(bias)
    if x.data.ndim != 2 or bias.size != x.shape[1] or bias.data.ndim > 2:
        raise ShapeError(f"add_bias: incompatible shapes {x.shape} and {bias.shape}")
    bshape = bias.shape
    return apply_op(
        x.data + bias.data.reshape(1, -1),
        (x, bias),
        lambda g: (g, g.sum(axis=0).reshape(bshape) if _needs(bias) else None),
    )


def linear(x, weight, bias) -> Tensor:
    """Fused ``x @ weight + bias`` for a bias vector of shape ``[D_out]``."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"linear: incompatible shapes {x.shape} and {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear: bias shape {bias.shape} does not match weight {weight.shape}")

    def rule(g):
        gx = g @ weight.data.T if _needs(x) else None
        gw = x.data.T @ g if _needs(weight) else None
        gb = g.sum(axis=0) if _needs(bias) else None
        return gx, gw, gb

    return apply_op(x.data @ weight.data + bias.data, (x, weight, bias), rule)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return apply_op(np.maximum(x.data, 0.0), (x,), lambda g: (g * mask,))


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def rule(g):
        return (g * (mask * (1.0 - slope) + slope),)

    if 0.0 <= slope <= 1.0:
        out = np.maximum(x.data, slope * x.data)
    else:
        out = np.where(mask, x.data, slope * x.data)
    return apply_op(out, (x,), rule)


def _sigmoid(v: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return apply_op(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return apply_op(y, (x,), lambda g: (g * (1.0 - y * y),))


def softplus(x) -> Tensor:
    """``log(1 + exp(x))`` without overflow."""
    x = as_tensor(x)
    return apply_op(np.logaddexp(0.0, x.data), (x,), lambda g: (g * _sigmoid(x.data),))


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log: input must be strictly positive")
    return apply_op(np.log(x.data), (x,), lambda g: (g / x.data,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    if np.any(np.abs(x.data) > EXP_LIMIT):
        raise DomainError(f"exp: |input| exceeds {EXP_LIMIT:g}")
    y = np.exp(x.data)
    return apply_op(y, (x,), lambda g: (g * y,))


def abs(x) -> Tensor:  # noqa: A001
    # subgradient 0 at exactly 0
    x = as_tensor(x)
    sign = np.sign(x.data)
    return apply_op(np.abs(x.data), (x,), lambda g: (g * sign,))


def _expand(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(x, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape
    return apply_op(
        np.asarray(x.data.sum(axis=axis, keepdims=keepdims)),
        (x,),
        lambda g: (_expand(g, shape, axis, keepdims),),
    )


def mean(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    n = x.size if axis is None else shape[axis]
    return apply_op(
        np.asarray(x.data.mean(axis=axis, keepdims=keepdims)),
        (x,),
        lambda g: (_expand(g / n, shape, axis, keepdims),),
    )


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = " and ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"concat: incompatible shapes {shapes}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return apply_op(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def slice_axis(x, start: int, stop: int, axis: int = 1) -> Tensor:
    """Contiguous slice ``[start, stop)`` along ``axis``."""
    x = as_tensor(x)
    if not 0 <= start < stop <= x.shape[axis]:
        raise ShapeError(f"slice [{start}, {stop}) out of range for shape {x.shape}")
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def rule(g):
        full = np.zeros(x.shape)
        full[index] = g
        return (full,)

    return apply_op(x.data[index], (x,), rule)


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"reshape: cannot view shape {x.shape} as {shape}")
    in_shape = x.shape
    return apply_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(in_shape),))


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.shape}")
    return apply_op(x.data.T, (x,), lambda g: (g.T,))


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)
    return apply_op(s, (x,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    return apply_op(out, (x,), lambda g: (g - np.exp(out) * g.sum(axis=axis, keepdims=True),))


def row_norm(x) -> Tensor:
    """Euclidean norm of each row of a matrix, shape ``[B, 1]``.

    The gradient at a zero row is taken to be zero.
    """
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"row_norm expects a matrix, got shape {x.shape}")
    n = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    safe = np.where(n > 0, n, 1.0)
    return apply_op(n, (x,), lambda g: (g * x.data / safe,))


def project_unit_ball(x) -> Tensor:
    """Divide each row by ``max(1, ||row||)``."""
    x = as_tensor(x)
    n = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    outside = n > 1.0
    denom = np.where(outside, n, 1.0)
    p = x.data / denom

    def rule(g):
        radial = (p * g).sum(axis=1, keepdims=True)
        return (np.where(outside, (g - p * radial) / denom, g),)

    return apply_op(p, (x,), rule)


# -- gradient checking -------------------------------------------------------

def _evaluate(function, points: list[np.ndarray]) -> float:
    args = [Tensor._wrap(p) for p in points]
    out = function(*args)
    return float(np.asarray(out.data if isinstance(out, Tensor) else out).reshape(-1)[0])


def grad_check(
    function: Callable[..., Tensor],
    point: Tensor | np.ndarray | Sequence,
    step: float = 1e-5,
) -> float:
    """Largest relative disagreement between tape gradients and central differences.

    ``point`` may be a single tensor or a sequence of tensors; ``function``
    receives them as positional arguments and must return a scalar. The error
    for each coordinate is ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    if not 0.0 < step <= 1e-2:
        raise ValueError(f"step must lie in (0, 1e-2], got {step}")
    single = isinstance(point, (Tensor, np.ndarray))
    points = [as_tensor(p).data for p in ([point] if single else point)]

    tape = Tape()
    watched = [tape.watch(Tensor._wrap(p)) for p in points]
    out = function(*watched)
    if isinstance(out, Tensor) and out.tape is tape:
        backward(out)
        analytic = [w.grad for w in watched]
    else:
        analytic = [np.zeros(p.shape) for p in points]

    worst = 0.0
    for k, base in enumerate(points):
        flat = base.reshape(-1)
        for i in range(flat.size):
            shifted = []
            for sign in (1.0, -1.0):
                bumped = flat.copy()
                bumped[i] += sign * step
                trial = list(points)
                trial[k] = bumped.reshape(base.shape)
                shifted.append(_evaluate(function, trial))
            numeric = (shifted[0] - shifted[1]) / (2.0 * step)
            a = float(analytic[k].reshape(-1)[i])
            err = np.abs(a - numeric) / max(1.0, np.abs(a), np.abs(numeric))
            worst = max(worst, float(err))
    return worst
