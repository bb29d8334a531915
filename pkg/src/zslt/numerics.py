"""Dense tensors with tape-based reverse-mode differentiation, plus Adam.

Tensors wrap read-only numpy arrays. Every primitive op checks its
output for NaN/Inf and, when a :class:`GradTape` is active and one of the
inputs is tracked by it, appends a node to the tape. ``backward_grads``
replays the tape in reverse, which is a valid reverse topological order
because nodes are appended in execution order.

Broadcasting is deliberately narrow. Elementwise ops accept equal shapes
or an operand whose shape is a trailing suffix of the other's (a bias or
a tensor shared across leading batch axes). ``matmul`` accepts equal
leading batch axes, or one plain 2-D operand shared across the batch.
Anything else raises :class:`DimensionError`.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import ContractError, DimensionError, NumericalError, ParameterError

_DEFAULT_DTYPE = np.dtype(np.float64)
_TAPES: list["GradTape"] = []


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


def resolve_dtype(precision) -> np.dtype:
    aliases = {"float32": np.float32, "f32": np.float32, "32": np.float32,
               "float64": np.float64, "f64": np.float64, "64": np.float64}
    key = str(np.dtype(precision)) if not isinstance(precision, str) else precision
    if key not in aliases:
        raise ParameterError(f"unsupported precision {precision!r}; use float32 or float64")
    return np.dtype(aliases[key])


@contextlib.contextmanager
def use_precision(precision):
    """Temporarily change the dtype used for tensors built from Python data."""
    global _DEFAULT_DTYPE
    prev = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = resolve_dtype(precision)
    try:
        yield _DEFAULT_DTYPE
    finally:
        _DEFAULT_DTYPE = prev


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values produced by {what}")


class Tensor:
    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else _DEFAULT_DTYPE
        arr = np.array(data, dtype=dtype)
        _check_finite(arr, "tensor construction")
        arr.flags.writeable = False
        self.data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray, what: str) -> "Tensor":
        _check_finite(arr, what)
        out = cls.__new__(cls)
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        out.data = arr
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    def __len__(self):
        return self.shape[0]

    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise TypeError("only division by a Python scalar is supported")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def tensor(data, dtype=None) -> Tensor:
    return Tensor(data, dtype=dtype)


def zeros(shape, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype or _DEFAULT_DTYPE))


class _Node:
    __slots__ = ("out", "inputs", "needs", "backward")

    def __init__(self, out, inputs, needs, backward):
        self.out = out
        self.inputs = inputs
        self.needs = needs
        self.backward = backward


class GradTape:
    """Records primitive ops executed while it is active.

    Use as a context manager; register leaves with :meth:`watch` before
    computing with them.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.leaves: dict[str, Tensor] = {}
        self._tracked: set[int] = set()

    def watch(self, tensor: Tensor, name: str | None = None) -> Tensor:
        if name is None:
            name = f"param{len(self.leaves)}"
        self.leaves[name] = tensor
        self._tracked.add(id(tensor))
        return tensor

    def watch_all(self, params: Mapping[str, Tensor]) -> None:
        for name, p in params.items():
            self.watch(p, name)

    def is_tracked(self, t: Tensor) -> bool:
        return id(t) in self._tracked

    def _record(self, out, inputs, needs, backward):
        self.nodes.append(_Node(out, inputs, needs, backward))
        self._tracked.add(id(out))

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False


def _emit(value: np.ndarray, inputs: tuple, backward: Callable, what: str) -> Tensor:
    out = Tensor._wrap(value, what)
    for tape in _TAPES:
        needs = tuple(id(x) in tape._tracked for x in inputs)
        if any(needs):
            tape._record(out, inputs, needs, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g.reshape(shape)


def _elementwise_shape(a: Tensor, b: Tensor, op: str) -> tuple:
    sa, sb = a.shape, b.shape
    if sa == sb:
        return sa
    if len(sb) < len(sa) and sa[len(sa) - len(sb):] == sb:
        return sa
    if len(sa) < len(sb) and sb[len(sb) - len(sa):] == sa:
        return sb
    raise DimensionError(f"{op}: shapes {sa} and {sb} are not compatible")


# -- elementwise ----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _elementwise_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _emit(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _elementwise_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _emit(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _elementwise_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit(x.data * c, (x,), lambda g: (g * c,), "scale")


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _emit(xd * xd, (x,), lambda g: (2.0 * g * xd,), "square")


def relu(x: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    mask = x.data > 0
    return _emit(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(x.data)
    return _emit(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(xd)
    return _emit(y, (x,), lambda g: (g / xd,), "log")


# -- reductions and reshaping --------------------------------------------


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    shape = x.shape
    if axis is None:
        return _emit(np.asarray(x.data.sum()), (x,),
                     lambda g: (np.broadcast_to(g, shape).copy(),), "sum")
    ax = axis % x.ndim
    return _emit(x.data.sum(axis=ax), (x,),
                 lambda g: (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),), "sum")


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return scale(sum(x, axis), 1.0 / n)


def transpose(x: Tensor) -> Tensor:
    if x.ndim < 2:
        raise DimensionError(f"transpose needs rank >= 2, got shape {x.shape}")
    return _emit(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = x.shape
    if int(np.prod(shape)) != x.data.size:
        raise DimensionError(f"cannot reshape {old} into {shape}")
    return _emit(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def take(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice ``[start, stop)`` of the last axis."""
    n = x.shape[-1]
    if not 0 <= start < stop <= n:
        raise DimensionError(f"slice [{start}, {stop}) outside last axis of size {n}")
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[..., start:stop] = g
        return (full,)

    return _emit(x.data[..., start:stop], (x,), backward, "take")


def concat(xs: Iterable[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    xs = tuple(xs)
    if not xs:
        raise DimensionError("concat of zero tensors")
    lead = xs[0].shape[:-1]
    for t in xs:
        if t.shape[:-1] != lead:
            raise DimensionError(f"concat: leading shapes {lead} and {t.shape[:-1]} differ")
    if len(xs) == 1:
        return xs[0]
    bounds = np.cumsum([0] + [t.shape[-1] for t in xs])

    def backward(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(xs)))

    return _emit(np.concatenate([t.data for t in xs], axis=-1), xs, backward, "concat")


# -- linear algebra -------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul batch dimensions differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _emit(ad @ bd, (a, b), backward, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    if w.ndim != 2:
        raise DimensionError(f"linear weight must be 2-D, got {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise DimensionError(f"linear bias shape {b.shape} does not match weight {w.shape}")
    y = matmul(x, w)
    return y if b is None else add(y, b)


# -- normalisation --------------------------------------------------------


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by subtracting the row max."""
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"softmax needs a non-empty last axis, got shape {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return _emit(y, (x,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),), "softmax")


def log_softmax_rows(x: Tensor) -> Tensor:
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"log_softmax needs a non-empty last axis, got shape {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return _emit(y, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),), "log_softmax")


def dropout(x: Tensor, p: float, mode: str = "eval", rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) so eval is identity."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if mode not in ("train", "eval"):
        raise ParameterError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise ParameterError("train-mode dropout needs a random stream")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _emit(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# -- differentiation ------------------------------------------------------


def backward_grads(loss: Tensor, tape: GradTape, params: Mapping[str, Tensor] | None = None) -> dict[str, Tensor]:
    """Gradients of a scalar ``loss`` w.r.t. ``params`` (default: the tape's leaves).

    Parameters the loss does not depend on get a zero gradient.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward_grads needs a scalar loss, got shape {loss.shape}")
    if params is None:
        params = tape.leaves
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for inp, need, gi in zip(node.inputs, node.needs, node.backward(g)):
            if not need or gi is None:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    out = {}
    for name, p in params.items():
        g = grads.get(id(p))
        if g is None:
            g = np.zeros(p.shape, dtype=p.dtype)
        out[name] = Tensor._wrap(np.asarray(g, dtype=p.dtype).reshape(p.shape), f"gradient of {name}")
    return out


def relative_error(g, g_hat) -> np.ndarray:
    g, g_hat = np.asarray(g), np.asarray(g_hat)
    return np.abs(g - g_hat) / np.maximum(1e-8, np.abs(g) + np.abs(g_hat))


def finite_difference_grads(fn: Callable[[Mapping[str, Tensor]], Tensor], params: Mapping[str, Tensor],
                            step: float = 1e-5) -> dict[str, np.ndarray]:
    """Central-difference gradients of scalar ``fn(params)``, one element at a time."""
    out = {}
    base = {k: v.numpy() for k, v in params.items()}
    for name, arr in base.items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            plus = fn({**params, name: Tensor(arr)}).item()
            arr[idx] = orig - step
            minus = fn({**params, name: Tensor(arr)}).item()
            arr[idx] = orig
            g[idx] = (plus - minus) / (2.0 * step)
        out[name] = g
    return out


def gradcheck(fn: Callable[[Mapping[str, Tensor]], Tensor], params: Mapping[str, Tensor],
              step: float = 1e-5) -> dict[str, float]:
    """Max relative error per parameter between tape gradients and central differences."""
    with GradTape() as tape:
        tape.watch_all(params)
        loss = fn(params)
    analytic = backward_grads(loss, tape, params)
    numeric = finite_difference_grads(fn, params, step)
    return {k: float(relative_error(analytic[k].data, numeric[k]).max(initial=0.0)) for k in params}


# -- optimisation ---------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, Tensor], state: AdamState) -> tuple[dict[str, Tensor], AdamState]:
    """One bias-corrected Adam update. Returns new parameter tensors; ``state`` is updated in place."""
    if set(params) != set(grads):
        missing = sorted(set(params) ^ set(grads))
        raise DimensionError(f"parameters and gradients disagree on names: {missing}")
    for k, p in params.items():
        if grads[k].shape != p.shape:
            raise DimensionError(f"gradient for {k} has shape {grads[k].shape}, parameter has {p.shape}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new = {}
    for k, p in params.items():
        g = np.asarray(grads[k].data)
        m = state.m.get(k)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[k] = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[k] + (1.0 - state.beta2) * (g * g)
        state.m[k], state.v[k] = m, v
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        new[k] = Tensor._wrap((p.data - update).astype(p.dtype), f"adam update of {k}")
    return new, state
