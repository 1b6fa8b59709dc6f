"""Reverse-mode automatic differentiation over float64 numpy arrays.

A Tensor wraps an ndarray together with an accumulated gradient and, for
values produced by tracked operations, a record of the operation and its
inputs. backward() walks the recorded graph in reverse topological order
and applies each operation's vector-Jacobian product.

Semantics mirrored throughout the package:
  * everything is float64; inputs are coerced on construction
  * leaf gradients accumulate across backward() calls until zeroed;
    non-leaf gradients are reset at the start of every backward()
  * inside no_grad() no operation records itself, so the same code path
    serves both training and plain evaluation
  * broadcasting is deliberately limited: elementwise ops accept equal
    shapes or a scalar operand, batching is explicit in affine/conv
"""

from contextlib import contextmanager

import numpy as np

from . import kernels

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable taping inside the context."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("values", "requires_grad", "_grad", "_op", "_parents", "_vjp")

    def __init__(self, values, requires_grad=False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self._grad = None
        self._op = None        # operation id, None for leaves
        self._parents = ()
        self._vjp = None       # grad -> per-parent contributions

    # -- gradient storage ------------------------------------------------

    @property
    def grad(self):
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = np.asarray(value, dtype=np.float64)

    def _accumulate(self, contribution):
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        self._grad += contribution

    def zero_grad(self):
        self._grad = None

    # -- graph ------------------------------------------------------------

    @property
    def shape(self):
        return self.values.shape

    @property
    def is_leaf(self):
        return self._op is None

    def item(self) -> float:
        return float(self.values)

    def detach(self) -> "Tensor":
        """Leaf view of the same values; gradients stop here."""
        return Tensor(self.values)

    def backward(self, seed=None):
        """Accumulate d(self)/d(leaf) into every reachable leaf's grad.

        seed defaults to ones (the usual scalar-loss case). Non-leaf grads
        are reset first so repeated calls never double-count through
        intermediate nodes, while leaf grads keep accumulating.
        """
        if seed is None:
            seed = np.ones_like(self.values)
        else:
            seed = np.asarray(seed, dtype=np.float64)
            if seed.shape != self.values.shape:
                raise ValueError("backward seed shape mismatch")

        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, post = stack.pop()
            if post:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        for node in topo:
            if node._op is not None:
                node._grad = None
        self._accumulate(seed)

        for node in reversed(topo):
            if node._vjp is None:
                continue
            contributions = node._vjp(node.grad)
            for parent, contribution in zip(node._parents, contributions):
                if contribution is not None and parent.requires_grad:
                    parent._accumulate(contribution)

    def __repr__(self):
        tag = self._op or ("param" if self.requires_grad else "leaf")
        return f"Tensor({tag}, shape={self.values.shape})"

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def make_op(values, parents, op, vjp) -> Tensor:
    """Build an op-result node.

    vjp(grad) must return one contribution (ndarray or None) per parent.
    Outside taping, or when no parent needs gradients, the result is a
    plain constant leaf.
    """
    out = Tensor(values)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._op = op
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _is_scalar(t: Tensor) -> bool:
    return t.values.size == 1


def _fold(grad, operand: Tensor):
    # reduce a broadcast gradient back onto a scalar operand's shape
    g = np.asarray(grad)
    if g.shape != operand.values.shape:
        return np.sum(g).reshape(operand.values.shape)
    return g


def _check_elementwise(a: Tensor, b: Tensor, op: str):
    if a.values.shape != b.values.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ValueError(f"{op}: shape mismatch {a.values.shape} vs {b.values.shape}")


# -- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, "add")
    return make_op(a.values + b.values, (a, b), "add",
                   lambda g: (_fold(g, a), _fold(g, b)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, "sub")
    return make_op(a.values - b.values, (a, b), "sub",
                   lambda g: (_fold(g, a), _fold(-g, b)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, "mul")
    return make_op(a.values * b.values, (a, b), "mul",
                   lambda g: (_fold(g * b.values, a), _fold(g * a.values, b)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, "div")
    if np.any(b.values == 0.0):
        raise ZeroDivisionError("div: zero divisor")
    inv = 1.0 / b.values
    return make_op(a.values * inv, (a, b), "div",
                   lambda g: (_fold(g * inv, a),
                              _fold(-g * a.values * inv * inv, b)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_op(-a.values, (a,), "neg", lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    exponent = float(exponent)
    out = a.values ** exponent
    return make_op(out, (a,), "pow",
                   lambda g: (g * exponent * a.values ** (exponent - 1.0),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.values)
    return make_op(out, (a,), "exp", lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.values <= 0.0):
        raise ValueError("log: non-positive input")
    return make_op(np.log(a.values), (a,), "log", lambda g: (g / a.values,))


# -- reductions and shape ----------------------------------------------------

def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    out = a.values.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.values.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.values.shape).copy(),)

    return make_op(out, (a,), "sum", vjp)


def tmean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    count = a.values.size if axis is None else a.values.shape[axis]
    return tsum(a, axis) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return make_op(a.values.reshape(shape), (a,), "reshape",
                   lambda g: (g.reshape(a.values.shape),))


def repeat_rows(a, k: int) -> Tensor:
    """Repeat each row k times consecutively: [n, ...] -> [n*k, ...]."""
    a = as_tensor(a)
    out = np.repeat(a.values, k, axis=0)
    n = a.values.shape[0]

    def vjp(g):
        return (g.reshape((n, k) + a.values.shape[1:]).sum(axis=1),)

    return make_op(out, (a,), "repeat_rows", vjp)


def tile_rows(a, k: int) -> Tensor:
    """Stack k copies of the whole array along axis 0; a vector becomes k rows."""
    a = as_tensor(a)
    base = a.values if a.values.ndim > 1 else a.values[None, :]
    out = np.tile(base, (k,) + (1,) * (base.ndim - 1))

    def vjp(g):
        return (g.reshape((k,) + base.shape).sum(axis=0).reshape(a.values.shape),)

    return make_op(out, (a,), "tile_rows", vjp)


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat: empty input")
    out = np.concatenate([t.values for t in tensors], axis=axis)
    sizes = [t.values.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        pieces = []
        for i in range(len(tensors)):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(index)])
        return tuple(pieces)

    return make_op(out, tuple(tensors), "concat", vjp)


# -- neural-net primitives ----------------------------------------------------

def affine(x, weight, bias) -> Tensor:
    """weight @ x + bias for a vector x, row-wise for a [batch, in] matrix."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if weight.values.ndim != 2 or bias.values.ndim != 1:
        raise ValueError("affine: weight must be [out, in], bias [out]")
    m, n = weight.values.shape
    if bias.values.shape[0] != m:
        raise ValueError("affine: bias/weight size mismatch")

    if x.values.ndim == 1:
        if x.values.shape[0] != n:
            raise ValueError("affine: input size mismatch")
        out = weight.values @ x.values + bias.values

        def vjp(g):
            return (weight.values.T @ g,
                    np.outer(g, x.values),
                    g)
    elif x.values.ndim == 2:
        if x.values.shape[1] != n:
            raise ValueError("affine: input size mismatch")
        out = x.values @ weight.values.T + bias.values

        def vjp(g):
            return (g @ weight.values,
                    g.T @ x.values,
                    g.sum(axis=0))
    else:
        raise ValueError("affine: input must be a vector or [batch, in] matrix")

    return make_op(out, (x, weight, bias), "affine", vjp)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.values > 0
    return make_op(np.where(mask, a.values, 0.0), (a,), "relu",
                   lambda g: (np.where(mask, g, 0.0),))


SIGMOID_FLOOR = 0.005


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_scaled(a, lo=SIGMOID_FLOOR, hi=1.0) -> Tensor:
    """Sigmoid rescaled onto [lo, hi]; keeps likelihood outputs above zero."""
    a = as_tensor(a)
    s = _sigmoid(a.values)
    span = hi - lo
    return make_op(lo + span * s, (a,), "sigmoid_scaled",
                   lambda g: (g * span * s * (1.0 - s),))


def activation(a, mode: str) -> Tensor:
    if mode == "relu":
        return relu(a)
    if mode == "sigmoid_scaled":
        return sigmoid_scaled(a)
    raise ValueError(f"activation: unknown mode {mode!r}")


def conv2d(x, weight, bias, stride=2, pad=1) -> Tensor:
    """2-D convolution over a [channels, h, w] input with zero padding."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.values.ndim != 3 or weight.values.ndim != 4:
        raise ValueError("conv2d: input must be [c,h,w], weight [o,c,kh,kw]")
    if x.values.shape[0] != weight.values.shape[1]:
        raise ValueError("conv2d: channel mismatch")
    out = kernels.conv2d_forward(x.values, weight.values, bias.values, stride, pad)

    def vjp(g):
        gx, gw, gb = kernels.conv2d_backward(x.values, weight.values, g, stride, pad)
        return (gx, gw, gb)

    return make_op(out, (x, weight, bias), "conv2d", vjp)


def maxpool2x2(x) -> Tensor:
    """2x2/stride-2 max pooling with ceil semantics on a [c,h,w] input."""
    x = as_tensor(x)
    if x.values.ndim != 3:
        raise ValueError("maxpool2x2: input must be [c,h,w]")
    out, idx = kernels.maxpool2x2_forward(x.values)

    def vjp(g):
        return (kernels.maxpool2x2_backward(x.values.shape, idx, g),)

    return make_op(out, (x,), "maxpool2x2", vjp)
