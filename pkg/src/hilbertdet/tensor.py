"""Dense float64 tensors with taped reverse-mode differentiation.

The operation set is deliberately closed: elementwise arithmetic, a handful of
activations, reductions and reshapes live here, while structured operations
(convolution, pooling, normalization, scans) register nodes through the same
mechanism from their own modules. Every node remembers its execution order, so
the backward pass replays the tape strictly in reverse.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.special import erf as _erf

_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_SQRT_2_OVER_PI = float(np.sqrt(2.0 / np.pi))


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class NumericError(ArithmeticError):
    """A non-finite value surfaced where the math requires finite inputs."""


_GRAD_ENABLED = True
_NODE_COUNTER = itertools.count()


class no_grad:
    """Context manager that disables tape recording (inference, timing runs)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the shape of its source operand."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A dense array plus optional participation in the gradient tape.

    Data is always float64 ("widest native real type" policy: every tolerance
    in the test suite assumes a 52-bit mantissa). Tensors are treated as
    immutable once produced by an operation; only leaf parameters are updated
    in place by the optimizer, between tapes.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_pos")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._pos = -1

    # -- bookkeeping ---------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def is_leaf(self) -> bool:
        return self._backward is None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- backward ------------------------------------------------------

    def backward(self, seed=None):
        """Accumulate d(self)/d(leaf) into .grad of every requires_grad leaf.

        A multi-element tensor needs an explicit seed of the same shape;
        a one-element tensor defaults to seed 1.
        """
        if seed is None:
            if self.data.size != 1:
                raise ShapeError(
                    "backward() on a tensor with "
                    f"{self.data.size} elements requires an explicit seed"
                )
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(seed, dtype=np.float64)
            if seed.shape != self.data.shape:
                raise ShapeError(
                    f"seed shape {seed.shape} does not match tensor shape {self.shape}"
                )

        if self._backward is None:
            if self.requires_grad:
                self.grad = seed if self.grad is None else self.grad + seed
            return

        # Collect reachable interior nodes, then visit them in reverse
        # execution order (the node counter is the execution order), each
        # exactly once.
        nodes = []
        seen = {id(self)}
        stack = [self]
        while stack:
            t = stack.pop()
            if t._backward is not None:
                nodes.append(t)
                for p in t._parents:
                    if p.requires_grad and id(p) not in seen:
                        seen.add(id(p))
                        stack.append(p)
        nodes.sort(key=lambda t: t._pos, reverse=True)

        pending = {id(self): seed}
        for t in nodes:
            g = pending.pop(id(t), None)
            if g is None:
                continue
            parent_grads = t._backward(g)
            for p, pg in zip(t._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if pg.shape != p.data.shape:
                    raise ShapeError(
                        f"internal: gradient shape {pg.shape} != operand shape {p.shape}"
                    )
                if p._backward is None:
                    p.grad = pg if p.grad is None else p.grad + pg
                else:
                    key = id(p)
                    pending[key] = pg if key not in pending else pending[key] + pg

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        return _record(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, self.data.shape), _unbroadcast(g, other.data.shape)),
        )

    __radd__ = __add__

    def __mul__(self, other):
        other = as_tensor(other)
        return _record(
            self.data * other.data,
            (self, other),
            lambda g: (
                _unbroadcast(g * other.data, self.data.shape),
                _unbroadcast(g * self.data, other.data.shape),
            ),
        )

    __rmul__ = __mul__

    def __neg__(self):
        return _record(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        other = as_tensor(other)
        return _record(
            self.data - other.data,
            (self, other),
            lambda g: (_unbroadcast(g, self.data.shape), _unbroadcast(-g, other.data.shape)),
        )

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __truediv__(self, other):
        other = as_tensor(other)
        inv = 1.0 / other.data
        return _record(
            self.data * inv,
            (self, other),
            lambda g: (
                _unbroadcast(g * inv, self.data.shape),
                _unbroadcast(-g * self.data * inv * inv, other.data.shape),
            ),
        )

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out = self.data ** exponent
        return _record(
            out,
            (self,),
            lambda g: (g * exponent * self.data ** (exponent - 1),),
        )

    # -- elementwise functions ------------------------------------------

    def exp(self):
        out = np.exp(self.data)
        return _record(out, (self,), lambda g: (g * out,))

    def log(self):
        return _record(np.log(self.data), (self,), lambda g: (g / self.data,))

    def sqrt(self):
        out = np.sqrt(self.data)
        return _record(out, (self,), lambda g: (g * 0.5 / out,))

    def clip(self, lo: float, hi: float):
        mask = (self.data >= lo) & (self.data <= hi)
        return _record(np.clip(self.data, lo, hi), (self,), lambda g: (g * mask,))

    def relu(self):
        mask = self.data > 0
        return _record(self.data * mask, (self,), lambda g: (g * mask,))

    def sigmoid(self):
        out = _sigmoid(self.data)
        return _record(out, (self,), lambda g: (g * out * (1.0 - out),))

    def softplus(self):
        out = _softplus(self.data)
        sig = _sigmoid(self.data)
        return _record(out, (self,), lambda g: (g * sig,))

    def silu(self):
        sig = _sigmoid(self.data)
        out = self.data * sig
        return _record(out, (self,), lambda g: (g * (sig + out * (1.0 - sig)),))

    def gelu(self):
        cdf = 0.5 * (1.0 + _erf(self.data * _INV_SQRT2))
        pdf_term = 0.5 * self.data * _SQRT_2_OVER_PI * np.exp(-0.5 * self.data * self.data)
        return _record(self.data * cdf, (self,), lambda g: (g * (cdf + pdf_term),))

    # -- reductions and shape -------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def bwd(g):
            if axis is None:
                return (np.broadcast_to(g, self.data.shape).copy(),)
            gx = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gx, self.data.shape).copy(),)

        return _record(out, (self,), bwd)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.data.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        return _record(
            self.data.reshape(shape), (self,), lambda g: (g.reshape(old),)
        )


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _record(data: np.ndarray, parents: tuple, backward) -> Tensor:
    """Create an output tensor, registering a tape node when grads are live."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._pos = next(_NODE_COUNTER)
    return out


_SIGMOID_LO = np.nextafter(0.0, 1.0)
_SIGMOID_HI = np.nextafter(1.0, 0.0)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    # Strictly inside (0, 1): saturated values round to the nearest interior float.
    return np.clip(out, _SIGMOID_LO, _SIGMOID_HI)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus_inverse(y: np.ndarray) -> np.ndarray:
    """x such that softplus(x) = y, for y > 0. Used to seed timescale biases."""
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


# Functional aliases so call sites can read like the math.
def exp(x: Tensor) -> Tensor:
    return as_tensor(x).exp()


def log(x: Tensor) -> Tensor:
    return as_tensor(x).log()


def sqrt(x: Tensor) -> Tensor:
    return as_tensor(x).sqrt()


def relu(x: Tensor) -> Tensor:
    return as_tensor(x).relu()


def sigmoid(x: Tensor) -> Tensor:
    return as_tensor(x).sigmoid()


def softplus(x: Tensor) -> Tensor:
    return as_tensor(x).softplus()


def silu(x: Tensor) -> Tensor:
    return as_tensor(x).silu()


def gelu(x: Tensor) -> Tensor:
    return as_tensor(x).gelu()


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data
    return _record(
        np.minimum(a.data, b.data),
        (a, b),
        lambda g: (
            _unbroadcast(g * take_a, a.data.shape),
            _unbroadcast(g * ~take_a, b.data.shape),
        ),
    )


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data >= b.data
    return _record(
        np.maximum(a.data, b.data),
        (a, b),
        lambda g: (
            _unbroadcast(g * take_a, a.data.shape),
            _unbroadcast(g * ~take_a, b.data.shape),
        ),
    )
