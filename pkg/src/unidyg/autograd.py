"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Operations record onto the tape that is active in the current thread
(``with Tape() as tape: ...``). Outside a tape they just compute values, which
is how evaluation runs.

Complex tensors are real tensors whose leading axis has length 2: index 0 is
the real plane and index 1 the imaginary plane. Gradients of complex
quantities are taken with respect to this real view, so every complex
parameter is simply two real arrays to the optimizer.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import spectral
from .errors import DimensionError, InvalidArgumentError, NumericError

_local = threading.local()

# |z| below this is treated as the origin, where the magnitude has zero gradient.
MAGNITUDE_EPS = 1e-12


def active_tape() -> "Tape | None":
    stack = getattr(_local, "tapes", None)
    return stack[-1] if stack else None


@dataclass
class TapeNode:
    id: int
    op: str
    inputs: tuple
    value: np.ndarray
    backward: Callable | None


class Tape:
    """Append-only record of one forward pass."""

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self._param_nodes: dict[int, int] = {}
        self._leaves: dict[int, "Parameter"] = {}

    def __enter__(self):
        stack = getattr(_local, "tapes", None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.tapes.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def _append(self, op, inputs, value, backward) -> int:
        node_id = len(self.nodes)
        self.nodes.append(TapeNode(node_id, op, tuple(inputs), value, backward))
        return node_id

    def node_of(self, x) -> int | None:
        if isinstance(x, Parameter):
            key = id(x)
            node = self._param_nodes.get(key)
            if node is None:
                node = self._append("param", (), x.value, None)
                self._param_nodes[key] = node
                self._leaves[node] = x
            return node
        if isinstance(x, Tensor) and x.tape is self:
            return x.node
        return None


@contextmanager
def no_grad():
    """Suspend recording: operations inside compute plain values."""
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


class Tensor:
    __slots__ = ("value", "tape", "node")
    __array_priority__ = 100

    def __init__(self, value, tape: Tape | None = None, node: int | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.node = node

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def requires_grad(self) -> bool:
        return self.node is not None

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, tracked={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


class Parameter(Tensor):
    """A trainable leaf. Complex parameters use the planar (2, ...) layout."""

    __slots__ = ("name", "grad")

    def __init__(self, value, name: str = "param"):
        super().__init__(np.array(value, dtype=np.float64, copy=True))
        self.name = name
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _value(x):
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _record(op: str, value, inputs: Sequence, backward) -> Tensor:
    tape = active_tape()
    if tape is None:
        return Tensor(value)
    ids = [tape.node_of(x) for x in inputs]
    if all(i is None for i in ids):
        return Tensor(value)
    node = tape._append(op, ids, value, backward)
    return Tensor(value, tape, node)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --------------------------------------------------------------------------
# Branch recording. Piecewise operations report which side of their kink each
# element falls on; grad_check uses this to skip coordinates whose finite
# difference straddles a kink.


@contextmanager
def _branch_log():
    prev = getattr(_local, "branches", None)
    log: list[np.ndarray] = []
    _local.branches = log
    try:
        yield log
    finally:
        _local.branches = prev


def record_branch(decisions: np.ndarray) -> None:
    log = getattr(_local, "branches", None)
    if log is not None:
        log.append(np.asarray(decisions, dtype=bool).copy())


# --------------------------------------------------------------------------
# Elementwise and structural ops


def add(a, b) -> Tensor:
    av, bv = _value(a), _value(b)
    out = av + bv

    def backward(g, needs):
        return (
            _unbroadcast(g, av.shape) if needs[0] else None,
            _unbroadcast(g, bv.shape) if needs[1] else None,
        )

    return _record("add", out, (a, b), backward)


def sub(a, b) -> Tensor:
    av, bv = _value(a), _value(b)
    out = av - bv

    def backward(g, needs):
        return (
            _unbroadcast(g, av.shape) if needs[0] else None,
            _unbroadcast(-g, bv.shape) if needs[1] else None,
        )

    return _record("sub", out, (a, b), backward)


def neg(a) -> Tensor:
    return _record("neg", -_value(a), (a,), lambda g, needs: (-g,))


def mul(a, b) -> Tensor:
    av, bv = _value(a), _value(b)
    out = av * bv

    def backward(g, needs):
        return (
            _unbroadcast(g * bv, av.shape) if needs[0] else None,
            _unbroadcast(g * av, bv.shape) if needs[1] else None,
        )

    return _record("mul", out, (a, b), backward)


def div(a, b) -> Tensor:
    av, bv = _value(a), _value(b)
    out = av / bv

    def backward(g, needs):
        return (
            _unbroadcast(g / bv, av.shape) if needs[0] else None,
            _unbroadcast(-g * av / (bv * bv), bv.shape) if needs[1] else None,
        )

    return _record("div", out, (a, b), backward)


def matmul(x, w) -> Tensor:
    """(..., k) @ (k, m) -> (..., m)."""
    xv, wv = _value(x), _value(w)
    if wv.ndim != 2 or xv.shape[-1] != wv.shape[0]:
        raise DimensionError(f"matmul shapes {xv.shape} @ {wv.shape}")
    out = xv @ wv

    def backward(g, needs):
        gx = g @ wv.T if needs[0] else None
        gw = None
        if needs[1]:
            gw = xv.reshape(-1, xv.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return gx, gw

    return _record("matmul", out, (x, w), backward)


def einsum(spec: str, a, b) -> Tensor:
    """Two-operand einsum. Every index of an operand must also appear in the
    other operand or in the output."""
    av, bv = _value(a), _value(b)
    ins, out_idx = spec.split("->")
    ia, ib = ins.split(",")
    out = np.einsum(spec, av, bv)

    def backward(g, needs):
        ga = np.einsum(f"{out_idx},{ib}->{ia}", g, bv) if needs[0] else None
        gb = np.einsum(f"{out_idx},{ia}->{ib}", g, av) if needs[1] else None
        return ga, gb

    return _record("einsum", out, (a, b), backward)


def tsum(x, axis=None, keepdims=False) -> Tensor:
    xv = _value(x)
    out = xv.sum(axis=axis, keepdims=keepdims)

    def backward(g, needs):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, xv.shape).copy(),)

    return _record("sum", out, (x,), backward)


def mean(x, axis=None, keepdims=False) -> Tensor:
    xv = _value(x)
    count = xv.size if axis is None else np.prod([xv.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis, keepdims), 1.0 / count)


def reshape(x, shape) -> Tensor:
    xv = _value(x)
    out = xv.reshape(shape)
    return _record("reshape", out, (x,), lambda g, needs: (g.reshape(xv.shape),))


def getitem(x, index) -> Tensor:
    xv = _value(x)
    out = xv[index]
    parts = index if isinstance(index, tuple) else (index,)
    advanced = any(isinstance(p, (np.ndarray, list)) for p in parts)

    def backward(g, needs):
        full = np.zeros_like(xv)
        if advanced:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _record("getitem", np.array(out, copy=True), (x,), backward)


def take(x, indices, axis: int = 0) -> Tensor:
    """Gather along one axis with an integer index array (any shape)."""
    xv = _value(x)
    indices = np.asarray(indices, dtype=np.int64)
    out = np.take(xv, indices, axis=axis)

    def backward(g, needs):
        full = np.zeros_like(xv)
        moved = np.moveaxis(full, axis, 0)
        gm = np.moveaxis(g, list(range(axis, axis + indices.ndim)), list(range(indices.ndim)))
        np.add.at(moved, indices, gm)
        return (full,)

    return _record("take", out, (x,), backward)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    values = [_value(t) for t in tensors]
    out = np.concatenate(values, axis=axis)
    sizes = [v.shape[axis] for v in values]
    bounds = np.cumsum([0] + sizes)

    def backward(g, needs):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) if needs[i] else None
            for i in range(len(values))
        )

    return _record("concat", out, tuple(tensors), backward)


def pad_last(x, n: int) -> Tensor:
    """Zero-pad or truncate the last axis to length n."""
    xv = _value(x)
    k = xv.shape[-1]
    if k == n:
        return as_tensor(x)
    if k > n:
        return getitem(x, (Ellipsis, slice(0, n)))
    out = np.zeros(xv.shape[:-1] + (n,))
    out[..., :k] = xv
    return _record("pad", out, (x,), lambda g, needs: (g[..., :k].copy(),))


def broadcast_to(x, shape) -> Tensor:
    xv = _value(x)
    out = np.broadcast_to(xv, shape).copy()
    return _record("broadcast", out, (x,), lambda g, needs: (_unbroadcast(g, xv.shape),))


def relu(x) -> Tensor:
    xv = _value(x)
    positive = xv > 0
    record_branch(positive)
    return _record("relu", xv * positive, (x,), lambda g, needs: (g * positive,))


def sigmoid(x) -> Tensor:
    xv = _value(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * xv))
    return _record("sigmoid", out, (x,), lambda g, needs: (g * out * (1.0 - out),))


def exp(x) -> Tensor:
    out = np.exp(_value(x))
    return _record("exp", out, (x,), lambda g, needs: (g * out,))


def log(x) -> Tensor:
    xv = _value(x)
    return _record("log", np.log(xv), (x,), lambda g, needs: (g / xv,))


def detach(x) -> Tensor:
    return Tensor(_value(x))


def masked_softmax(scores, mask, axis: int = -1) -> Tensor:
    """Softmax over entries where ``mask`` is true; masked entries get 0.

    A slice with no valid entry yields all zeros. The maximum valid score is
    subtracted before exponentiation.
    """
    s = _value(scores)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), s.shape)
    shifted = np.where(mask, s, -np.inf)
    top = np.max(shifted, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(mask, np.exp(np.where(mask, s - top, 0.0)), 0.0)
    total = e.sum(axis=axis, keepdims=True)
    alpha = np.divide(e, total, out=np.zeros_like(e), where=total > 0)

    def backward(g, needs):
        inner = (g * alpha).sum(axis=axis, keepdims=True)
        return (alpha * (g - inner),)

    return _record("masked_softmax", alpha, (scores,), backward)


def bce_with_logits(logits, labels) -> Tensor:
    """Mean binary cross-entropy on logits, in the stable log-sum-exp form."""
    x = _value(logits)
    y = np.asarray(labels, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"logits {x.shape} vs labels {y.shape}")
    n = x.size
    losses = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    out = np.asarray(losses.mean())
    prob = 0.5 * (1.0 + np.tanh(0.5 * x))

    return _record("bce", out, (logits,), lambda g, needs: (g * (prob - y) / n,))


# --------------------------------------------------------------------------
# Complex ops on the planar (2, ...) layout


def complex_from_real(x) -> Tensor:
    xv = _value(x)
    out = np.stack([xv, np.zeros_like(xv)])
    return _record("complex", out, (x,), lambda g, needs: (g[0].copy(),))


def real(z) -> Tensor:
    return getitem(z, 0)


def _check_planar(zv, name):
    if zv.ndim < 1 or zv.shape[0] != 2:
        raise DimensionError(f"{name} expects a planar complex tensor with leading axis 2, got {zv.shape}")


def fft(z) -> Tensor:
    """Forward DFT along the last axis of a planar complex tensor."""
    zv = _value(z)
    _check_planar(zv, "fft")
    re, im = spectral.transform(zv[0], zv[1])
    out = np.stack([re, im])

    def backward(g, needs):
        # Adjoint of the unnormalised DFT is n * inverse DFT.
        n = zv.shape[-1]
        gr, gi = spectral.transform(g[0], g[1], inverse=True)
        return (np.stack([gr, gi]) * n,)

    return _record("fft", out, (z,), backward)


def ifft(z) -> Tensor:
    zv = _value(z)
    _check_planar(zv, "ifft")
    re, im = spectral.transform(zv[0], zv[1], inverse=True)
    out = np.stack([re, im])

    def backward(g, needs):
        n = zv.shape[-1]
        gr, gi = spectral.transform(g[0], g[1])
        return (np.stack([gr, gi]) / n,)

    return _record("ifft", out, (z,), backward)


def cmul(a, b) -> Tensor:
    """Elementwise complex product with broadcasting over the trailing axes."""
    av, bv = _value(a), _value(b)
    _check_planar(av, "cmul")
    _check_planar(bv, "cmul")
    ar, ai, br, bi = av[0], av[1], bv[0], bv[1]
    out = np.stack([ar * br - ai * bi, ar * bi + ai * br])

    def backward(g, needs):
        gr, gi = g[0], g[1]
        ga = gb = None
        if needs[0]:
            # g * conj(b)
            ga = np.stack([
                _unbroadcast(gr * br + gi * bi, ar.shape),
                _unbroadcast(gi * br - gr * bi, ai.shape),
            ])
        if needs[1]:
            gb = np.stack([
                _unbroadcast(gr * ar + gi * ai, br.shape),
                _unbroadcast(gi * ar - gr * ai, bi.shape),
            ])
        return ga, gb

    return _record("cmul", out, (a, b), backward)


def cabs(z) -> Tensor:
    """Elementwise magnitude sqrt(re^2 + im^2); zero gradient at the origin."""
    zv = _value(z)
    _check_planar(zv, "cabs")
    mag = np.hypot(zv[0], zv[1])
    away = mag >= MAGNITUDE_EPS
    record_branch(away)
    safe = np.where(away, mag, 1.0)

    def backward(g, needs):
        scale = np.where(away, g / safe, 0.0)
        return (np.stack([scale * zv[0], scale * zv[1]]),)

    return _record("cabs", mag, (z,), backward)


# --------------------------------------------------------------------------
# Backward pass, gradient checking, optimizer


def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Accumulate d(loss)/d(param) into ``param.grad`` for every parameter on
    the tape. Returns the gradients contributed by this call, by name."""
    if loss.value.size != 1:
        raise InvalidArgumentError(f"loss must be scalar, got shape {loss.shape}")
    contributed: dict[str, np.ndarray] = {}
    if loss.tape is not tape or loss.node is None:
        return contributed
    grads: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.value)}
    for node in reversed(tape.nodes[: loss.node + 1]):
        g = grads.pop(node.id, None)
        if g is None:
            continue
        if node.op == "param":
            param = tape._leaves[node.id]
            param.grad += g
            contributed[param.name] = g
            continue
        needs = tuple(i is not None for i in node.inputs)
        for i, gi in zip(node.inputs, node.backward(g, needs)):
            if i is None or gi is None:
                continue
            prev = grads.get(i)
            grads[i] = gi if prev is None else prev + gi
    return contributed


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    excluded: int


def _scalar(out) -> float:
    v = _value(out)
    if v.size != 1:
        raise InvalidArgumentError("grad_check function must return a scalar")
    v = float(v.reshape(()))
    if not np.isfinite(v):
        raise NumericError(f"non-finite forward value {v}")
    return v


def _same_branches(a, b) -> bool:
    return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(fn, inputs, eps: float = 1e-5, coords: int | None = None, seed: int = 0,
               details: bool = False):
    """Compare tape gradients of ``fn(*tensors)`` with central differences.

    The error per coordinate is |analytic - numeric| / max(1, |analytic|) and
    the maximum is returned. Coordinates whose +/- eps evaluations take a
    different branch of a piecewise op (relu, magnitude at the origin, gate
    masks) than the base point are excluded. ``coords`` limits the check to a
    random subset of that many coordinates per input.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise InvalidArgumentError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    arrays = [np.array(x, dtype=np.float64, copy=True) for x in inputs]
    params = [Parameter(a, name=f"input{i}") for i, a in enumerate(arrays)]
    with _branch_log() as base_branches, Tape() as tape:
        out = fn(*params)
        _scalar(out)
    backward(tape, out)

    def evaluate():
        with _branch_log() as log:
            value = _scalar(fn(*[Tensor(a) for a in arrays]))
        return value, log

    rng = np.random.default_rng(seed)
    worst, checked, excluded = 0.0, 0, 0
    for arr, param in zip(arrays, params):
        flat = arr.reshape(-1)
        grad = param.grad.reshape(-1)
        idx = np.arange(flat.size)
        if coords is not None and coords < flat.size:
            idx = rng.choice(flat.size, size=coords, replace=False)
        for j in idx:
            orig = flat[j]
            flat[j] = orig + eps
            f_plus, b_plus = evaluate()
            flat[j] = orig - eps
            f_minus, b_minus = evaluate()
            flat[j] = orig
            if not (_same_branches(b_plus, base_branches) and _same_branches(b_minus, base_branches)):
                excluded += 1
                continue
            numeric = (f_plus - f_minus) / (2 * eps)
            err = abs(grad[j] - numeric) / max(1.0, abs(grad[j]))
            worst = max(worst, err)
            checked += 1
    if details:
        return GradCheckResult(worst, checked, excluded)
    return worst


@dataclass
class AdamState:
    step: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Parameter], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """One Adam update of every parameter from its accumulated ``grad``.

    Each real scalar (including the two planes of a complex parameter) is an
    independent coordinate. Gradients are zeroed afterwards. A non-finite
    gradient aborts the step before anything is modified.
    """
    if lr < 0:
        raise InvalidArgumentError(f"learning rate must be non-negative, got {lr}")
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in {getattr(p, 'name', p)}")
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for i, p in enumerate(params):
        g = p.grad
        m = state.m.get(i)
        if m is None:
            m = state.m[i] = np.zeros_like(p.value)
            state.v[i] = np.zeros_like(p.value)
        v = state.v[i]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.zero_grad()
    return state


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState()

    def step(self):
        adam_step(self.params, self.state, self.lr, self.betas[0], self.betas[1], self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
