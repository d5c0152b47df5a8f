"""Small reverse-mode autodiff core on float64 numpy arrays.

A :class:`Tensor` records the op that produced it; :meth:`Tensor.backward`
walks that record in reverse topological order and accumulates
``d loss / d leaf`` into every leaf created with ``requires_grad=True``.
Only what the trainer needs is here: elementwise arithmetic with
broadcasting, matmul, tanh/exp/log, reductions, clipping, and the
softmax family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NonFiniteError, UsageError

LOG_2PI = math.log(2.0 * math.pi)
LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    @classmethod
    def _make(cls, data, parents, backward, op):
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(f"non-finite values produced by {op}")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._op = op
        live = tuple(p for p in parents if p.requires_grad)
        out.requires_grad = bool(live)
        if live:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op})"

    def zero_grad(self):
        self.grad = None

    # arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = _wrap(other)
        a, b = self, other

        def back(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor._make(a.data + b.data, (a, b), back, "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = _wrap(other)
        a, b = self, other

        def back(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return Tensor._make(a.data - b.data, (a, b), back, "sub")

    def __rsub__(self, other):
        return _wrap(other) - self

    def __mul__(self, other):
        other = _wrap(other)
        a, b = self, other

        def back(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        return Tensor._make(a.data * b.data, (a, b), back, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other)
        a, b = self, other

        def back(g):
            return (
                _unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
            )

        with np.errstate(divide="ignore", invalid="ignore"):
            y = a.data / b.data
        return Tensor._make(y, (a, b), back, "div")

    def __rtruediv__(self, other):
        return _wrap(other) / self

    def __neg__(self):
        a = self
        return Tensor._make(-a.data, (a,), lambda g: (-g,), "neg")

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise UsageError("only constant exponents are supported")
        a, k = self, float(exponent)

        def back(g):
            return (g * k * a.data ** (k - 1.0),)

        with np.errstate(all="ignore"):
            y = a.data**k
        return Tensor._make(y, (a,), back, f"pow{k:g}")

    def __matmul__(self, other):
        other = _wrap(other)
        a, b = self, other
        if a.shape[-1] != b.shape[0]:
            raise ConfigurationError(f"matmul shape mismatch {a.shape} @ {b.shape}")

        def back(g):
            if a.ndim == 1:
                ga = g @ b.data.T
                gb = np.outer(a.data, g)
            else:
                ga = g @ b.data.T
                gb = a.data.T @ g
            return ga, gb

        return Tensor._make(a.data @ b.data, (a, b), back, "matmul")

    # autodiff -----------------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if self.size != 1:
            raise UsageError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise UsageError("loss does not depend on any parameter")
        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
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


# elementwise and reductions ----------------------------------------------


def tanh(x) -> Tensor:
    x = _wrap(x)
    y = np.tanh(x.data)
    return Tensor._make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def exp(x) -> Tensor:
    x = _wrap(x)
    with np.errstate(over="ignore"):
        y = np.exp(x.data)
    return Tensor._make(y, (x,), lambda g: (g * y,), "exp")


def log(x) -> Tensor:
    x = _wrap(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(x.data)
    return Tensor._make(y, (x,), lambda g: (g / x.data,), "log")


def square(x) -> Tensor:
    x = _wrap(x)
    return Tensor._make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def tsum(x, axis=None) -> Tensor:
    x = _wrap(x)
    shape = x.shape

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return Tensor._make(np.sum(x.data, axis=axis), (x,), back, "sum")


def mean(x, axis=None) -> Tensor:
    x = _wrap(x)
    n = x.size if axis is None else x.shape[axis]
    return tsum(x, axis) * (1.0 / n)


def minimum(a, b) -> Tensor:
    """Elementwise min; on ties the gradient goes to ``a``."""
    a, b = _wrap(a), _wrap(b)
    pick_a = a.data <= b.data

    def back(g):
        return (
            _unbroadcast(np.where(pick_a, g, 0.0), a.shape),
            _unbroadcast(np.where(pick_a, 0.0, g), b.shape),
        )

    return Tensor._make(np.minimum(a.data, b.data), (a, b), back, "minimum")


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; zero gradient where clamped."""
    x = _wrap(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return Tensor._make(np.clip(x.data, lo, hi), (x,), lambda g: (np.where(inside, g, 0.0),), "clip")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = _wrap(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def back(g):
        return (g - p * np.sum(g, axis=axis, keepdims=True),)

    return Tensor._make(y, (x,), back, "log_softmax")


def softmax(x, axis: int = -1) -> Tensor:
    x = _wrap(x)
    y = softmax_array(x.data, axis)

    def back(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return Tensor._make(y, (x,), back, "softmax")


def softmax_array(z, axis: int = -1) -> np.ndarray:
    z = _as_array(z)
    e = np.exp(z - np.max(z, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax_array(z, axis: int = -1) -> np.ndarray:
    z = _as_array(z)
    shifted = z - np.max(z, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def take_along_last(x, index) -> Tensor:
    """``x[..., index]`` per row: (B, K) with (B,) indices -> (B,); (K,) with int -> scalar."""
    x = _wrap(x)
    idx = np.asarray(index)
    if x.ndim == 1:
        out = x.data[int(idx)]

        def back(g):
            full = np.zeros_like(x.data)
            full[int(idx)] = g
            return (full,)

    else:
        rows = np.arange(x.shape[0])
        out = x.data[rows, idx]

        def back(g):
            full = np.zeros_like(x.data)
            full[rows, idx] = g
            return (full,)

    return Tensor._make(np.asarray(out, dtype=np.float64), (x,), back, "take")


# networks -------------------------------------------------------------------


def orthogonal(rng: np.random.Generator, n_in: int, n_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return gain * q[:n_in, :n_out]


class Mlp:
    """Fully connected net: tanh on hidden layers, identity on the output.

    Weights are stored (fan_in, fan_out) so a batch ``x`` of shape (B, n_in)
    maps through ``x @ W + b``.
    """

    def __init__(self, layer_sizes, rng: np.random.Generator, hidden_gain: float = 1.0,
                 output_gain: float = 1.0):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ConfigurationError(f"invalid layer sizes {layer_sizes!r}")
        self.layer_sizes = sizes
        self.weights = []
        self.biases = []
        last = len(sizes) - 2
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = output_gain if i == last else hidden_gain
            self.weights.append(Tensor(orthogonal(rng, n_in, n_out, gain), requires_grad=True))
            self.biases.append(Tensor(np.zeros(n_out), requires_grad=True))

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def named_parameters(self) -> dict:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"layer{i}.weight"] = w
            out[f"layer{i}.bias"] = b
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def _check(self, x: np.ndarray):
        if x.shape[-1] != self.input_size:
            raise ConfigurationError(
                f"input last dim {x.shape[-1]} does not match network input size {self.input_size}"
            )

    def forward(self, x) -> Tensor:
        h = _wrap(x)
        self._check(h.data)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = tanh(h)
        return h

    __call__ = forward

    def predict(self, x) -> np.ndarray:
        """Forward pass on raw arrays, nothing recorded. Same arithmetic as :meth:`forward`."""
        h = _as_array(x)
        self._check(h)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.data + b.data
            if i < last:
                h = np.tanh(h)
        return h

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


# optimizer ------------------------------------------------------------------


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


class Adam:
    def __init__(self, params, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(
            first_moment=[np.zeros_like(p.data) for p in self.params],
            second_moment=[np.zeros_like(p.data) for p in self.params],
            learning_rate=lr, beta1=beta1, beta2=beta2, epsilon=eps,
        )

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        """One bias-corrected Adam update; clears the gradients it consumed."""
        missing = [i for i, p in enumerate(self.params) if p.grad is None]
        if missing:
            raise UsageError(f"adam step with missing gradients for parameters {missing}")
        st = self.state
        st.step_count += 1
        b1, b2 = st.beta1, st.beta2
        c1 = 1.0 - b1**st.step_count
        c2 = 1.0 - b2**st.step_count
        for p, m, v in zip(self.params, st.first_moment, st.second_moment):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= st.learning_rate * (m / c1) / (np.sqrt(v / c2) + st.epsilon)
            p.grad = None


adam_step = Adam.step


def clip_grad_norm(params, max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


# distribution heads ---------------------------------------------------------


def gaussian_log_prob(mean, log_std, action) -> Tensor:
    """Diagonal Gaussian log density summed over the last axis.

    ``log_std`` is clamped to [-5, 2] before use.
    """
    mean = _wrap(mean)
    action = _as_array(action)
    if action.shape[-1] != mean.shape[-1]:
        raise ConfigurationError(f"action dim {action.shape[-1]} != mean dim {mean.shape[-1]}")
    ls = clip(_wrap(log_std), LOG_STD_MIN, LOG_STD_MAX)
    z = (Tensor(action) - mean) * exp(-ls)
    per_dim = square(z) * -0.5 - ls - 0.5 * LOG_2PI
    return tsum(per_dim, axis=-1)


def gaussian_log_prob_array(mean, log_std, action) -> np.ndarray:
    return gaussian_log_prob(_as_array(mean), _as_array(log_std), action).data


def categorical_log_prob(logits, index) -> Tensor:
    """``log softmax(logits)[index]`` for one row or a batch of rows."""
    logits = _wrap(logits)
    k = logits.shape[-1]
    idx = np.asarray(index)
    if np.any(idx < 0) or np.any(idx >= k):
        raise UsageError(f"category index {index!r} out of range for {k} classes")
    return take_along_last(log_softmax(logits), idx)


@dataclass
class GaussianHead:
    """State-independent log standard deviation attached to a mean network."""

    action_dim: int
    log_std: Tensor = field(default=None)

    def __post_init__(self):
        if self.log_std is None:
            self.log_std = Tensor(np.zeros(self.action_dim), requires_grad=True)

    def std(self) -> np.ndarray:
        return np.exp(np.clip(self.log_std.data, LOG_STD_MIN, LOG_STD_MAX))

    def log_prob(self, mean, action) -> Tensor:
        return gaussian_log_prob(mean, self.log_std, action)

    def entropy(self) -> Tensor:
        ls = clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)
        return tsum(ls + 0.5 * (LOG_2PI + 1.0))

    def sample(self, mean: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        mean = _as_array(mean)
        return mean + self.std() * rng.standard_normal(mean.shape)
