"""Dense float64 tensors with a reverse-mode tape, sized for small MLPs.

Tensors are plain ``numpy.ndarray`` objects in float64.  A :class:`Record`
is the tape: every primitive appends its output value and a vector-Jacobian
closure.  Networks are described by a tuple of layer objects and their
trainable weights live in one flat :class:`ParamVector`, which is what the
federation layer averages and ships around.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import prod
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

# probabilities are clamped to [PROB_EPS, 1 - PROB_EPS] inside the fused BCE
PROB_EPS = 1e-7
_LOGIT_CLIP = float(np.log((1.0 - PROB_EPS) / PROB_EPS))


class NonFiniteError(FloatingPointError):
    """A forward value or gradient contained NaN or Inf."""


class LayoutError(ValueError):
    """Two parameter vectors (or a vector and a network) disagree on layout."""


# --------------------------------------------------------------------------
# Parameter vectors


@dataclass(frozen=True)
class Slot:
    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return prod(self.shape)


Layout = tuple[Slot, ...]


def make_layout(shapes: Sequence[tuple[str, tuple[int, ...]]]) -> Layout:
    slots, offset = [], 0
    for name, shape in shapes:
        shape = tuple(int(s) for s in shape)
        slots.append(Slot(name, shape, offset))
        offset += prod(shape)
    return tuple(slots)


class ParamVector:
    """Flat float64 array plus the (name, shape, offset) map onto tensors."""

    __slots__ = ("data", "layout")

    def __init__(self, data, layout: Layout):
        data = np.asarray(data, dtype=np.float64)
        size = sum(s.size for s in layout)
        if data.ndim != 1 or data.size != size:
            raise LayoutError(f"flat data of size {data.size} does not fit layout of size {size}")
        self.data = data
        self.layout = layout

    @classmethod
    def zeros(cls, layout: Layout) -> "ParamVector":
        return cls(np.zeros(sum(s.size for s in layout)), layout)

    @classmethod
    def from_tensors(cls, tensors: Sequence[tuple[str, np.ndarray]]) -> "ParamVector":
        layout = make_layout([(name, np.shape(t)) for name, t in tensors])
        if not tensors:
            return cls(np.zeros(0), layout)
        flat = np.concatenate([np.asarray(t, dtype=np.float64).ravel() for _, t in tensors])
        return cls(flat, layout)

    def tensors(self) -> dict[str, np.ndarray]:
        """Views of the flat buffer reshaped per slot (no copies)."""
        return {s.name: self.data[s.offset:s.offset + s.size].reshape(s.shape) for s in self.layout}

    def copy(self) -> "ParamVector":
        return ParamVector(self.data.copy(), self.layout)

    def check_layout(self, other: "ParamVector") -> None:
        if self.layout != other.layout:
            raise LayoutError("parameter layouts differ")

    def __len__(self) -> int:
        return self.data.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.data, other.data)

    def __repr__(self) -> str:
        names = ",".join(s.name for s in self.layout)
        return f"ParamVector(size={self.data.size}, slots=[{names}])"


def axpy(alpha: float, x: ParamVector, y: ParamVector) -> ParamVector:
    """Return ``y + alpha * x`` as a new vector."""
    x.check_layout(y)
    return ParamVector(y.data + alpha * x.data, y.layout)


def param_norm(p: ParamVector) -> float:
    return float(np.linalg.norm(p.data))


# --------------------------------------------------------------------------
# Tape


class Record:
    """Topologically ordered tape of primitive applications.

    ``values[i]`` is the value of node ``i``.  ``ops`` holds
    ``(vjp, inputs, out)`` triples in creation order, so walking it backwards
    is a valid reverse topological order.  ``leaves`` maps node ids of
    parameter tensors to ``(tag, slot_name)``.
    """

    def __init__(self):
        self.values: list[np.ndarray] = []
        self.needs_grad: list[bool] = []
        self.ops: list[tuple[Callable, tuple[int, ...], int]] = []
        self.leaves: dict[int, tuple[str, str]] = {}
        self.params: dict[str, ParamVector] = {}
        self.output: int | None = None

    # node creation ----------------------------------------------------------
    def _new(self, value: np.ndarray, needs_grad: bool) -> int:
        # a finite sum implies every entry is finite
        if not np.isfinite(value.sum()):
            raise NonFiniteError("non-finite value in forward pass")
        self.values.append(value)
        self.needs_grad.append(needs_grad)
        return len(self.values) - 1

    def constant(self, value) -> int:
        return self._new(np.asarray(value, dtype=np.float64), False)

    def bind(self, tag: str, params: ParamVector) -> dict[str, int]:
        """Register a parameter vector; returns slot name -> leaf node id."""
        if tag in self.params:
            if self.params[tag] is not params:
                raise LayoutError(f"tag {tag!r} already bound to different parameters")
            return {name: nid for nid, (t, name) in self.leaves.items() if t == tag}
        self.params[tag] = params
        ids = {}
        for name, tensor in params.tensors().items():
            nid = self._new(tensor, True)
            self.leaves[nid] = (tag, name)
            ids[name] = nid
        return ids

    def _op(self, value, inputs: tuple[int, ...], vjp: Callable) -> int:
        grad = any(self.needs_grad[i] for i in inputs)
        out = self._new(value, grad)
        if grad:
            self.ops.append((vjp, inputs, out))
        return out

    # primitives -------------------------------------------------------------
    def affine(self, x: int, w: int, b: int | None = None) -> int:
        X, W = self.values[x], self.values[w]
        out = X @ W
        if b is not None:
            out = out + self.values[b]

            def vjp(g):
                return g @ W.T, X.T @ g, g.sum(axis=0)

            return self._op(out, (x, w, b), vjp)

        def vjp(g):
            return g @ W.T, X.T @ g

        return self._op(out, (x, w), vjp)

    def relu(self, x: int) -> int:
        X = self.values[x]
        mask = X > 0
        return self._op(np.where(mask, X, 0.0), (x,), lambda g: (g * mask,))

    def leaky_relu(self, x: int, slope: float = 0.2) -> int:
        X = self.values[x]
        factor = np.where(X > 0, 1.0, slope)
        return self._op(X * factor, (x,), lambda g: (g * factor,))

    def tanh(self, x: int) -> int:
        Y = np.tanh(self.values[x])
        return self._op(Y, (x,), lambda g: (g * (1.0 - Y * Y),))

    def sigmoid(self, x: int) -> int:
        Y = _sigmoid(self.values[x])
        return self._op(Y, (x,), lambda g: (g * Y * (1.0 - Y),))

    def square(self, x: int) -> int:
        X = self.values[x]
        return self._op(X * X, (x,), lambda g: (2.0 * g * X,))

    def scale(self, x: int, c: float) -> int:
        return self._op(c * self.values[x], (x,), lambda g: (c * g,))

    def add(self, x: int, y: int) -> int:
        return self._op(self.values[x] + self.values[y], (x, y), lambda g: (g, g))

    def concat(self, x: int, y: int) -> int:
        X, Y = self.values[x], self.values[y]
        split = X.shape[-1]
        out = np.concatenate([X, Y], axis=-1)
        return self._op(out, (x, y), lambda g: (g[..., :split], g[..., split:]))

    def mean(self, x: int) -> int:
        X = self.values[x]
        n = X.size
        return self._op(np.asarray(X.mean()), (x,), lambda g: (np.full(X.shape, g / n),))

    def bce_logits(self, logits: int, target: float) -> int:
        """Mean binary cross-entropy of sigmoid(logits) against a constant target.

        Logits are clipped so the implied probability stays inside
        [PROB_EPS, 1 - PROB_EPS]; the gradient is zero where clipping is active.
        """
        L = self.values[logits]
        clipped = np.clip(L, -_LOGIT_CLIP, _LOGIT_CLIP)
        inside = clipped == L
        # -t log s(l) - (1-t) log(1-s(l)) == softplus(l) - t*l
        loss = np.logaddexp(0.0, clipped) - target * clipped
        n = L.size
        out = np.asarray(loss.mean())

        def vjp(g):
            return (g / n * (_sigmoid(clipped) - target) * inside,)

        return self._op(out, (logits,), vjp)


_sigmoid = expit


def gradients(record: Record, node: int, out_grad=1.0) -> dict[str, ParamVector]:
    """Reverse sweep from ``node``; returns one gradient vector per bound tag."""
    seed = np.broadcast_to(np.asarray(out_grad, dtype=np.float64), record.values[node].shape)
    if not np.all(np.isfinite(seed)):
        raise NonFiniteError("non-finite output gradient")
    grads: dict[int, np.ndarray] = {node: np.array(seed, dtype=np.float64)}
    for vjp, inputs, out in reversed(record.ops):
        if out > node:
            continue
        g = grads.pop(out, None)
        if g is None:
            continue
        for i, gi in zip(inputs, vjp(g)):
            if not record.needs_grad[i]:
                continue
            if i in grads:
                grads[i] = grads[i] + gi
            else:
                grads[i] = gi
    result = {}
    for tag, params in record.params.items():
        flat = np.zeros(len(params))
        slots = {s.name: s for s in params.layout}
        for nid, (t, name) in record.leaves.items():
            if t != tag or nid not in grads:
                continue
            s = slots[name]
            flat[s.offset:s.offset + s.size] = np.reshape(grads[nid], -1)
        if not np.all(np.isfinite(flat)):
            raise NonFiniteError(f"non-finite gradient for {tag!r}")
        result[tag] = ParamVector(flat, params.layout)
    return result


# --------------------------------------------------------------------------
# Layers and networks


@dataclass(frozen=True)
class Linear:
    n_in: int
    n_out: int
    bias: bool = True


@dataclass(frozen=True)
class Activation:
    kind: str  # relu | leaky_relu | tanh | sigmoid | square
    slope: float = 0.2


@dataclass(frozen=True)
class Scale:
    factor: float


@dataclass(frozen=True)
class ConcatCond:
    """Append the conditioning vector to the running activations."""

    n_cond: int


Layer = Linear | Activation | Scale | ConcatCond


@dataclass(frozen=True)
class Net:
    layers: tuple
    in_dim: int

    @cached_property
    def layout(self) -> Layout:
        shapes = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Linear):
                shapes.append((f"{i}.weight", (layer.n_in, layer.n_out)))
                if layer.bias:
                    shapes.append((f"{i}.bias", (layer.n_out,)))
        return make_layout(shapes)

    @cached_property
    def n_params(self) -> int:
        return sum(s.size for s in self.layout)

    @property
    def cond_dim(self) -> int:
        return sum(l.n_cond for l in self.layers if isinstance(l, ConcatCond))

    @property
    def out_dim(self) -> int:
        width = self.in_dim
        for layer in self.layers:
            if isinstance(layer, Linear):
                if layer.n_in != width:
                    raise LayoutError(f"layer expects width {layer.n_in}, got {width}")
                width = layer.n_out
            elif isinstance(layer, ConcatCond):
                width += layer.n_cond
        return width


def apply_net(net: Net, params: ParamVector, x: int, rec: Record, tag: str,
              cond: int | None = None) -> int:
    """Append ``net`` applied to node ``x`` onto ``rec``; returns the output node."""
    if params.layout != net.layout:
        raise LayoutError(f"parameters for {tag!r} do not match the network layout")
    ids = rec.bind(tag, params)
    h = x
    for i, layer in enumerate(net.layers):
        if isinstance(layer, Linear):
            width = rec.values[h].shape[-1]
            if width != layer.n_in:
                raise LayoutError(f"layer {i} expects width {layer.n_in}, got {width}")
            h = rec.affine(h, ids[f"{i}.weight"], ids.get(f"{i}.bias"))
        elif isinstance(layer, Activation):
            if layer.kind == "relu":
                h = rec.relu(h)
            elif layer.kind == "leaky_relu":
                h = rec.leaky_relu(h, layer.slope)
            elif layer.kind == "tanh":
                h = rec.tanh(h)
            elif layer.kind == "sigmoid":
                h = rec.sigmoid(h)
            elif layer.kind == "square":
                h = rec.square(h)
            else:
                raise ValueError(f"unknown activation {layer.kind!r}")
        elif isinstance(layer, Scale):
            h = rec.scale(h, layer.factor)
        elif isinstance(layer, ConcatCond):
            if cond is None:
                raise LayoutError(f"layer {i} needs a conditioning input")
            if rec.values[cond].shape[-1] != layer.n_cond:
                raise LayoutError(f"conditioning width {rec.values[cond].shape[-1]} != {layer.n_cond}")
            h = rec.concat(h, cond)
        else:
            raise TypeError(f"unsupported layer {layer!r}")
    return h


def forward(net: Net, params: ParamVector, x, cond=None) -> tuple[np.ndarray, Record]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :] if net.in_dim != 1 or x.size == 1 else x[:, None]
    if x.shape[-1] != net.in_dim:
        raise LayoutError(f"input width {x.shape[-1]} != network input {net.in_dim}")
    rec = Record()
    c = None if cond is None else rec.constant(np.atleast_2d(cond))
    out = apply_net(net, params, rec.constant(x), rec, "net", c)
    rec.output = out
    return rec.values[out], rec


def backward(record: Record, out_grad) -> ParamVector:
    """Gradient of ``sum(out_grad * output)`` w.r.t. the single bound network."""
    if record.output is None:
        raise LayoutError("record has no designated output")
    if len(record.params) != 1:
        raise LayoutError("backward() needs exactly one bound parameter vector; use gradients()")
    out_grad = np.asarray(out_grad, dtype=np.float64)
    if out_grad.shape not in ((), record.values[record.output].shape):
        raise LayoutError("out_grad shape does not match the output")
    (grad,) = gradients(record, record.output, out_grad).values()
    return grad


def grad_check(net: Net, params: ParamVector, x, step: float = 1e-5, cond=None,
               seed: int = 0) -> float:
    """Relative gap ``max|auto - fd| / max|fd|`` between autodiff and central differences.

    The network output is reduced to a scalar through a fixed random
    projection so every output coordinate participates.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    out, rec = forward(net, params, x, cond)
    if len(params) == 0:
        return 0.0
    proj = np.random.default_rng(seed).standard_normal(out.shape)
    auto = backward(rec, proj).data

    def f(flat):
        y, _ = forward(net, ParamVector(flat, params.layout), x, cond)
        return float(np.sum(proj * y))

    base = params.data
    fd = np.empty_like(base)
    for j in range(base.size):
        up, down = base.copy(), base.copy()
        up[j] += step
        down[j] -= step
        fd[j] = (f(up) - f(down)) / (2.0 * step)
    return float(np.max(np.abs(auto - fd)) / max(1e-12, np.max(np.abs(fd))))
