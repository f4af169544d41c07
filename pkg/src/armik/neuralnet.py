"""Array-valued reverse-mode autodiff, dense rectifier networks, and AdamW.

The tape is the graph of Tensor nodes built during a forward pass: each
non-leaf Tensor records its parents and a vector-Jacobian callback. Calling
``backward`` on the scalar loss replays those callbacks in reverse
topological order and accumulates gradients on every Tensor it reaches,
parameters and intermediate inputs alike. Everything is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError


class Tensor:
    """Node in a dynamically recorded computation graph."""

    __slots__ = ("data", "grad", "_parents", "_vjp")

    def __init__(self, data, _parents=(), _vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.data.shape

    def backward(self, adjoint=1.0) -> None:
        """Accumulate gradients of (adjoint . self) over the recorded graph."""
        seed = np.broadcast_to(np.asarray(adjoint, dtype=np.float64), self.data.shape)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = _accumulate(self.grad, seed)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            for parent, grad in zip(node._parents, node._vjp(node.grad)):
                if grad is not None:
                    parent.grad = _accumulate(parent.grad, grad)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _accumulate(current: np.ndarray | None, update: np.ndarray) -> np.ndarray:
    if current is None:
        return np.array(update, dtype=np.float64, copy=True)
    current += update
    return current


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to the shape of a broadcast operand."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")
    return Tensor(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0.0  # subgradient 0 at exactly 0
    return Tensor(a.data * mask, (a,), lambda g: (g * mask,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.data.shape
    return Tensor(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(parts, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    return Tensor(
        np.concatenate([p.data for p in parts], axis=axis),
        tuple(parts),
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def segment_sum(a, starts: np.ndarray, counts: np.ndarray, axis: int = 1) -> Tensor:
    """Sum contiguous segments along an axis (segments must cover the axis)."""
    a = as_tensor(a)
    if int(np.sum(counts)) != a.data.shape[axis]:
        raise ValueError("segment counts must cover the reduced axis")
    out = np.add.reduceat(a.data, starts, axis=axis)
    return Tensor(out, (a,), lambda g: (np.repeat(g, counts, axis=axis),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    size = a.data.size
    return Tensor(a.data.mean(), (a,), lambda g: (np.broadcast_to(g / size, a.data.shape),))


def zero_grads(params) -> None:
    for _, p in params:
        p.grad = None


def gradients(params) -> dict[str, np.ndarray]:
    """Collected per-parameter gradients after a backward pass."""
    out: dict[str, np.ndarray] = {}
    for name, p in params:
        if p.grad is None:
            raise RuntimeError(f"no gradient recorded for {name}: run a forward and backward pass first")
        out[name] = p.grad
    return out


class MLP:
    """Dense network: rectifier on hidden layers, identity on the output."""

    def __init__(self, sizes, weights, biases):
        self.sizes = tuple(int(s) for s in sizes)
        self.weights = weights
        self.biases = biases

    @staticmethod
    def init(sizes, rng: np.random.Generator) -> "MLP":
        """Rectifier-scaled normal weights (std = sqrt(2/fan_in)), zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(Tensor(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out))))
            biases.append(Tensor(np.zeros(fan_out)))
        return MLP(sizes, weights, biases)

    @property
    def n_params(self) -> int:
        return sum((fi + 1) * fo for fi, fo in zip(self.sizes[:-1], self.sizes[1:]))

    def parameters(self, prefix: str = "mlp") -> list[tuple[str, Tensor]]:
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"{prefix}/W{i}", w))
            out.append((f"{prefix}/b{i}", b))
        return out

    def forward(self, x) -> np.ndarray:
        """Frozen-parameter inference; accepts a vector or a row matrix."""
        arr = np.asarray(x, dtype=np.float64)
        squeeze = arr.ndim == 1
        h = arr[None, :] if squeeze else arr
        if h.ndim != 2 or h.shape[1] != self.sizes[0]:
            raise ValueError(f"expected input dimension {self.sizes[0]}, got shape {arr.shape}")
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.data + b.data
            if i != last:
                h = np.maximum(h, 0.0)
        return h[0] if squeeze else h

    def forward_t(self, x: Tensor) -> Tensor:
        """Taped forward pass for training; input must be a row matrix."""
        if x.data.ndim != 2 or x.data.shape[1] != self.sizes[0]:
            raise ValueError(f"expected input shape (*, {self.sizes[0]}), got {x.data.shape}")
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = add(matmul(h, w), b)
            if i != last:
                h = relu(h)
        return h

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.parameters()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.parameters():
            p.data = np.array(arrays[name], dtype=np.float64)


def mlp_forward(net: MLP, x) -> np.ndarray:
    return net.forward(x)


@dataclass
class AdamWState:
    """Decoupled-weight-decay Adam state shared by all parameter blocks."""

    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(state: AdamWState, params, grads=None):
    """One optimizer step over named parameters.

    grads defaults to the gradients stored on the tensors. The step aborts
    before touching any parameter if some gradient is non-finite.
    """
    if grads is None:
        grads = gradients(params)
    for name, _ in params:
        if not np.all(np.isfinite(grads[name])):
            raise NumericalError(f"non-finite gradient in parameter block {name}")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, p in params:
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(p.data)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p.data = p.data * (1.0 - state.lr * state.weight_decay) - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state
