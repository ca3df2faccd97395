"""Minimal reverse-mode automatic differentiation for the generator.

Dense float64 arrays only, with the batch dimension first when present.
The op set is exactly what the recurrent tile policy needs: affine layers,
GRU gating, log-softmax heads, a handful of elementwise ops, and RMSProp.
There is no general broadcasting beyond adding a bias row.
"""
from __future__ import annotations

from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch, NonFiniteValue

Array = np.ndarray

_check_finite = True


def set_finite_checks(enabled: bool) -> None:
    """Toggle per-op NaN/Inf detection (on by default)."""
    global _check_finite
    _check_finite = bool(enabled)


class Tensor:
    """A dense float64 value in the computation graph.

    ``requires`` marks tensors that gradients must flow into (parameters,
    or inputs under a gradient check); constants skip gradient buffers.
    """

    __slots__ = ("data", "grad", "requires")

    def __init__(self, data, requires: bool = False) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires = requires

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def add_grad(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.data.shape}, requires={self.requires})"


class Tape:
    """Operation record of one forward pass.

    Nodes are appended in creation order, so the reversed list is a valid
    topological order; backward visits each node exactly once.
    """

    __slots__ = ("nodes",)

    def __init__(self) -> None:
        self.nodes: list[tuple[Tensor, Callable[[Array], None]]] = []

    def __len__(self) -> int:
        return len(self.nodes)


def _finish(out_data: Array, requires: bool, tape: Tape | None,
            pull: Callable[[Array], None], op: str) -> Tensor:
    if _check_finite and not np.all(np.isfinite(out_data)):
        raise NonFiniteValue(f"non-finite value produced by op '{op}'")
    out = Tensor(out_data, requires)
    if tape is not None and requires:
        tape.nodes.append((out, pull))
    return out


def linear(tape: Tape | None, x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b for x of shape (B, n) or (n,), w (n, m), b (m,)."""
    if w.data.ndim != 2 or b.data.ndim != 1 or w.data.shape[1] != b.data.shape[0]:
        raise DimensionMismatch(
            f"linear: weight {w.data.shape} and bias {b.data.shape} disagree")
    if x.data.shape[-1] != w.data.shape[0]:
        raise DimensionMismatch(
            f"linear: input {x.data.shape} incompatible with weight {w.data.shape}")
    out_data = x.data @ w.data + b.data
    requires = x.requires or w.requires or b.requires

    def pull(g: Array) -> None:
        if w.requires:
            if x.data.ndim == 1:
                w.add_grad(np.outer(x.data, g))
            else:
                w.add_grad(x.data.T @ g)
        if b.requires:
            b.add_grad(g if g.ndim == 1 else g.sum(axis=0))
        if x.requires:
            x.add_grad(g @ w.data.T)

    return _finish(out_data, requires, tape, pull, "linear")


def leaky_relu(tape: Tape | None, x: Tensor, slope: float = 0.01) -> Tensor:
    mask = x.data > 0
    out_data = np.where(mask, x.data, slope * x.data)

    def pull(g: Array) -> None:
        if x.requires:
            x.add_grad(np.where(mask, g, slope * g))

    return _finish(out_data, x.requires, tape, pull, "leaky_relu")


def sigmoid(tape: Tape | None, x: Tensor) -> Tensor:
    d = x.data
    out_data = np.empty_like(d)
    pos = d >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    out_data[~pos] = ez / (1.0 + ez)

    def pull(g: Array) -> None:
        if x.requires:
            x.add_grad(g * out_data * (1.0 - out_data))

    return _finish(out_data, x.requires, tape, pull, "sigmoid")


def tanh(tape: Tape | None, x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)

    def pull(g: Array) -> None:
        if x.requires:
            x.add_grad(g * (1.0 - out_data * out_data))

    return _finish(out_data, x.requires, tape, pull, "tanh")


def log_softmax(tape: Tape | None, x: Tensor) -> Tensor:
    """Log-softmax over the last axis; logsumexp of each row is 0."""
    m = x.data.max(axis=-1, keepdims=True)
    z = x.data - m
    out_data = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def pull(g: Array) -> None:
        if x.requires:
            x.add_grad(g - np.exp(out_data) * g.sum(axis=-1, keepdims=True))

    return _finish(out_data, x.requires, tape, pull, "log_softmax")


_ACTIVATIONS = ("identity", "leaky_relu", "log_softmax")


def ff_forward(tape: Tape | None, x: Tensor, w: Tensor, b: Tensor,
               activation: str = "identity") -> Tensor:
    """One feed-forward layer: activation(x @ w + b)."""
    if activation not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}; expected one of {_ACTIVATIONS}")
    y = linear(tape, x, w, b)
    if activation == "leaky_relu":
        return leaky_relu(tape, y)
    if activation == "log_softmax":
        return log_softmax(tape, y)
    return y


def concat(tape: Tape | None, parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    out_data = np.concatenate([p.data for p in parts], axis=-1)
    requires = any(p.requires for p in parts)
    widths = [p.data.shape[-1] for p in parts]

    def pull(g: Array) -> None:
        lo = 0
        for p, wd in zip(parts, widths):
            if p.requires:
                p.add_grad(g[..., lo:lo + wd])
            lo += wd

    return _finish(out_data, requires, tape, pull, "concat")


def _binary(tape: Tape | None, a: Tensor, b: Tensor, op: str) -> Tensor:
    if a.data.shape != b.data.shape:
        raise DimensionMismatch(f"{op}: shapes {a.data.shape} vs {b.data.shape}")
    if op == "add":
        out_data = a.data + b.data
    elif op == "sub":
        out_data = a.data - b.data
    else:
        out_data = a.data * b.data
    requires = a.requires or b.requires

    def pull(g: Array) -> None:
        if op == "mul":
            if a.requires:
                a.add_grad(g * b.data)
            if b.requires:
                b.add_grad(g * a.data)
        else:
            if a.requires:
                a.add_grad(g)
            if b.requires:
                b.add_grad(-g if op == "sub" else g)

    return _finish(out_data, requires, tape, pull, op)


def add(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    return _binary(tape, a, b, "add")


def sub(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    return _binary(tape, a, b, "sub")


def mul(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    return _binary(tape, a, b, "mul")


def add_const(tape: Tape | None, a: Tensor, c: Array | float) -> Tensor:
    out_data = a.data + c

    def pull(g: Array) -> None:
        if a.requires:
            a.add_grad(g)

    return _finish(out_data, a.requires, tape, pull, "add_const")


def scale(tape: Tape | None, a: Tensor, s: float) -> Tensor:
    out_data = a.data * s

    def pull(g: Array) -> None:
        if a.requires:
            a.add_grad(g * s)

    return _finish(out_data, a.requires, tape, pull, "scale")


def square(tape: Tape | None, a: Tensor) -> Tensor:
    out_data = a.data * a.data

    def pull(g: Array) -> None:
        if a.requires:
            a.add_grad(2.0 * a.data * g)

    return _finish(out_data, a.requires, tape, pull, "square")


def pick(tape: Tape | None, lp: Tensor, idx: Array) -> Tensor:
    """Select one column per row: out[i] = lp[i, idx[i]]."""
    if lp.data.ndim != 2:
        raise DimensionMismatch(f"pick expects a 2-D tensor, got {lp.data.shape}")
    rows = np.arange(lp.data.shape[0])
    out_data = lp.data[rows, idx]

    def pull(g: Array) -> None:
        if lp.requires:
            buf = np.zeros_like(lp.data)
            buf[rows, idx] = g
            lp.add_grad(buf)

    return _finish(out_data, lp.requires, tape, pull, "pick")


def sum_all(tape: Tape | None, a: Tensor) -> Tensor:
    out_data = np.asarray(a.data.sum())

    def pull(g: Array) -> None:
        if a.requires:
            a.add_grad(np.broadcast_to(g, a.data.shape))

    return _finish(out_data, a.requires, tape, pull, "sum_all")


def mean_all(tape: Tape | None, a: Tensor) -> Tensor:
    n = a.data.size
    out_data = np.asarray(a.data.sum() / n)

    def pull(g: Array) -> None:
        if a.requires:
            a.add_grad(np.broadcast_to(g / n, a.data.shape))

    return _finish(out_data, a.requires, tape, pull, "mean_all")


def reshape(tape: Tape | None, a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out_data = a.data.reshape(shape)

    def pull(g: Array) -> None:
        if a.requires:
            a.add_grad(g.reshape(a.data.shape))

    return _finish(out_data, a.requires, tape, pull, "reshape")


def gru_forward(tape: Tape | None, x: Tensor, h_prev: Tensor,
                wz: Tensor, bz: Tensor, wr: Tensor, br: Tensor,
                wh: Tensor, bh: Tensor) -> Tensor:
    """Standard GRU gating: h' = (1 - z) * h + z * h~."""
    hidden = wz.data.shape[1]
    if h_prev.data.shape[-1] != hidden:
        raise DimensionMismatch(
            f"gru: hidden state {h_prev.data.shape} vs weight {wz.data.shape}")
    if x.data.shape[-1] + hidden != wz.data.shape[0]:
        raise DimensionMismatch(
            f"gru: input {x.data.shape} + hidden {hidden} vs weight {wz.data.shape}")
    xh = concat(tape, [x, h_prev])
    z = sigmoid(tape, linear(tape, xh, wz, bz))
    r = sigmoid(tape, linear(tape, xh, wr, br))
    xrh = concat(tape, [x, mul(tape, r, h_prev)])
    h_cand = tanh(tape, linear(tape, xrh, wh, bh))
    return add(tape, h_prev, mul(tape, z, sub(tape, h_cand, h_prev)))


def backward(tape: Tape, loss: Tensor,
             params: Mapping[str, Tensor] | None = None) -> dict[str, Array] | None:
    """Run reverse-mode accumulation from a scalar loss over one tape.

    When ``params`` is given, returns the gradient for every named
    parameter (zeros for parameters the tape never touched) and clears
    their gradient buffers. A tape is single-use.
    """
    if loss.data.size != 1:
        raise DimensionMismatch(f"loss must be scalar, got shape {loss.data.shape}")
    loss.grad = np.ones_like(loss.data)
    for out, pull in reversed(tape.nodes):
        if out.grad is not None:
            pull(out.grad)
    if params is None:
        return None
    grads: dict[str, Array] = {}
    for name, t in params.items():
        grads[name] = t.grad if t.grad is not None else np.zeros_like(t.data)
        t.grad = None
    return grads


class ParamStore:
    """Named parameter tensors plus one RMSProp accumulator per parameter."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}
        self._ms: dict[str, Array] = {}

    def create(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already exists")
        t = Tensor(np.array(data, dtype=np.float64), requires=True)
        self._params[name] = t
        self._ms[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for name in self.names():
            yield name, self._params[name]

    def accumulator(self, name: str) -> Array:
        return self._ms[name]

    def set_accumulator(self, name: str, value: Array) -> None:
        if value.shape != self._params[name].data.shape:
            raise DimensionMismatch(
                f"accumulator for {name!r}: {value.shape} vs {self._params[name].data.shape}")
        self._ms[name] = np.asarray(value, dtype=np.float64)


def rmsprop_step(store: ParamStore, grads: Mapping[str, Array],
                 lr: float | Callable[[str], float],
                 alpha: float = 0.99, eps: float = 1e-8,
                 clip_norm: float | None = None) -> None:
    """One RMSProp update: s <- a*s + (1-a)*g^2; p <- p - lr*g/(sqrt(s)+eps)."""
    lr_of = lr if callable(lr) else (lambda _name: lr)
    names = sorted(grads)
    for name in names:
        if not np.all(np.isfinite(grads[name])):
            raise NonFiniteValue(f"non-finite gradient for parameter {name!r}")
    if clip_norm is not None:
        total = np.sqrt(sum(float((grads[n] ** 2).sum()) for n in names))
        if total > clip_norm:
            factor = clip_norm / total
            grads = {n: grads[n] * factor for n in names}
    for name in names:
        g = grads[name]
        step = lr_of(name)
        if step <= 0:
            raise ValueError(f"learning rate for {name!r} must be positive")
        s = store.accumulator(name)
        s *= alpha
        s += (1.0 - alpha) * g * g
        store[name].data -= step * g / (np.sqrt(s) + eps)


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Array:
    """Uniform in +-sqrt(1/fan_in)."""
    bound = np.sqrt(1.0 / fan_in)
    return (rng.random(shape) * 2.0 - 1.0) * bound
