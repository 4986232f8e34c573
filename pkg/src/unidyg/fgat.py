"""Fourier graph attention (FGAT), its energy-gated variant and a time-domain
attention baseline.

All layers work on batches: a query per row ``(B, Lq)``, ``N`` keys and values
per row ``(B, N, Lk)`` and a validity mask ``(B, N)``. Queries, keys and values
are zero-padded to one transform length ``n`` (a power of two) before the DFT,
so queries and keys of different widths still meet frequency by frequency.
Spectral weights are per-frequency complex vectors stored planar as ``(2, n)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .errors import DimensionError, InvalidArgumentError

GATE_RULES = ("energy", "paper-literal")


def complex_glorot(n: int, rng: np.random.Generator, name: str) -> Parameter:
    # re and im each carry half the real Glorot variance
    bound = np.sqrt(6.0 / (2 * n)) / np.sqrt(2.0)
    return Parameter(rng.uniform(-bound, bound, size=(2, n)), name=name)


def real_glorot(fan_in: int, fan_out: int, rng: np.random.Generator, name: str) -> Parameter:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)), name=name)


def spectrum(x, n: int) -> Tensor:
    """DFT of real feature vectors zero-padded to length n."""
    if np.shape(ag._value(x))[-1] > n:
        raise DimensionError(f"feature length {np.shape(ag._value(x))[-1]} exceeds transform length {n}")
    return ag.fft(ag.complex_from_real(ag.pad_last(x, n)))


def magnitude_softmax(A, mask) -> Tensor:
    """Attention weights from complex scores.

    ``A`` is planar with shape ``(2, ..., N)`` for scalar scores or
    ``(2, ..., N, n)`` for per-frequency score vectors; in the latter case the
    score magnitude is the sum of the per-frequency magnitudes.
    """
    Av = ag._value(A)
    mask = np.asarray(mask, dtype=bool)
    mags = ag.cabs(A)
    if Av.ndim - 1 == mask.ndim + 1:
        mags = ag.tsum(mags, axis=-1)
    elif Av.ndim - 1 != mask.ndim:
        raise DimensionError(f"scores {Av.shape} do not match mask {mask.shape}")
    return ag.masked_softmax(mags, mask)


def gate_mask(P: np.ndarray, theta: float, rule: str = "energy") -> np.ndarray:
    """Boolean keep-mask over the last axis of a planar spectrum ``(2, ..., n)``."""
    energy = P[0] ** 2 + P[1] ** 2
    if rule == "energy":
        avg = energy.mean(axis=-1, keepdims=True)
        rel = np.divide(energy, avg, out=np.zeros_like(energy), where=avg > 0)
        return rel >= theta
    if rule == "paper-literal":
        return energy < theta
    raise InvalidArgumentError(f"unknown gate rule {rule!r}; expected one of {GATE_RULES}")


@dataclass
class GateParams:
    W_G: Parameter
    B: Parameter
    theta: float = 0.2
    rule: str = "energy"

    def __post_init__(self):
        if self.W_G.shape != self.B.shape or self.W_G.shape[0] != 2:
            raise DimensionError(f"gate weight {self.W_G.shape} and bias {self.B.shape} must both be (2, n)")
        if not self.theta >= 0:
            raise InvalidArgumentError(f"gate threshold must be non-negative, got {self.theta}")
        if self.rule not in GATE_RULES:
            raise InvalidArgumentError(f"unknown gate rule {self.rule!r}")

    @classmethod
    def init(cls, n, rng, theta=0.2, rule="energy", name="gate"):
        return cls(complex_glorot(n, rng, f"{name}.W_G"), Parameter(np.zeros((2, n)), f"{name}.B"), theta, rule)

    @property
    def n(self) -> int:
        return self.W_G.shape[-1]

    def parameters(self):
        return [self.W_G, self.B]


def energy_gate(P, gate: GateParams) -> Tensor:
    """W_G * (P * M) + B, where M keeps frequencies by spectral energy.

    Under the default ``energy`` rule a frequency is kept when its energy
    relative to the mean energy of its vector is at least ``theta``; the
    ``paper-literal`` rule keeps frequencies whose absolute energy is below
    ``theta``.
    """
    Pv = ag._value(P)
    if Pv.shape[-1] != gate.n:
        raise DimensionError(f"spectrum length {Pv.shape[-1]} != gate length {gate.n}")
    keep = gate_mask(Pv, gate.theta, gate.rule)
    ag.record_branch(keep)
    return ag.add(ag.cmul(gate.W_G, ag.mul(P, keep.astype(np.float64))), ag.reshape(gate.B, gate.B.shape[:1] + (1,) * (Pv.ndim - 2) + gate.B.shape[1:]))


def _check_inputs(q, k, v, mask):
    qv, kv = ag._value(q), ag._value(k)
    if qv.ndim != 2 or kv.ndim != 3 or kv.shape[:2] != np.shape(mask) or qv.shape[0] != kv.shape[0]:
        raise DimensionError(f"query {qv.shape}, keys {kv.shape}, mask {np.shape(mask)} are inconsistent")
    if v is not None and ag._value(v).shape[:2] != kv.shape[:2]:
        raise DimensionError(f"values {ag._value(v).shape} do not match keys {kv.shape}")


@dataclass
class FgatParams:
    W_q: Parameter
    W_k: Parameter
    W_v: Parameter
    out_dim: int

    def __post_init__(self):
        shapes = {self.W_q.shape, self.W_k.shape, self.W_v.shape}
        if len(shapes) != 1:
            raise DimensionError(f"weight spectra differ in shape: {shapes}")

    @classmethod
    def init(cls, n, out_dim, rng, name="fgat"):
        return cls(*(complex_glorot(n, rng, f"{name}.W_{p}") for p in "qkv"), out_dim=out_dim)

    @property
    def n(self) -> int:
        return self.W_q.shape[-1]

    def parameters(self):
        return [self.W_q, self.W_k, self.W_v]

    def forward(self, q, k, v, mask) -> Tensor:
        return fgat_forward(self, q, k, v, mask)


def _aggregate(spectra, alpha) -> Tensor:
    return ag.einsum("cbjf,bj->cbf", spectra, alpha)


def _to_time(agg, out_dim) -> Tensor:
    return ag.getitem(ag.ifft(agg), (0, Ellipsis, slice(0, out_dim)))


def fgat_forward(params: FgatParams, q, k, v, mask) -> Tensor:
    """Batched FGAT. ``v=None`` reuses the keys as values."""
    mask = np.asarray(mask, dtype=bool)
    _check_inputs(q, k, v, mask)
    n = params.n
    Fq = spectrum(q, n)
    Fk = spectrum(k, n)
    Fv = Fk if v is None else spectrum(v, n)
    # |(W_q Fq) * (W_k Fk)| = |W_q Fq| |W_k Fk| per frequency, so the summed
    # score magnitude is an inner product of magnitude spectra.
    mq = ag.cabs(ag.cmul(params.W_q, Fq))
    mk = ag.cabs(ag.cmul(params.W_k, Fk))
    scores = ag.einsum("bf,bjf->bj", mq, mk)
    alpha = ag.masked_softmax(scores, mask)
    # sum_j alpha_j (W_v * F(V_j)) = W_v * sum_j alpha_j F(V_j)
    agg = ag.cmul(params.W_v, _aggregate(Fv, alpha))
    return _to_time(agg, params.out_dim)


@dataclass
class FgatNParams:
    query: GateParams
    key: GateParams
    value: GateParams
    out_dim: int

    def __post_init__(self):
        if len({self.query.n, self.key.n, self.value.n}) != 1:
            raise DimensionError("gate spectra differ in length")

    @classmethod
    def init(cls, n, out_dim, rng, theta=0.2, rule="energy", name="fgat_n"):
        gates = [GateParams.init(n, rng, theta, rule, f"{name}.{p}") for p in ("query", "key", "value")]
        return cls(*gates, out_dim=out_dim)

    @property
    def n(self) -> int:
        return self.query.n

    def parameters(self):
        return self.query.parameters() + self.key.parameters() + self.value.parameters()

    def forward(self, q, k, v, mask) -> Tensor:
        return fgat_n_forward(self, q, k, v, mask)


def fgat_n_forward(params: FgatNParams, q, k, v, mask) -> Tensor:
    mask = np.asarray(mask, dtype=bool)
    _check_inputs(q, k, v, mask)
    n = params.n
    Fq = spectrum(q, n)
    Fk = spectrum(k, n)
    Fv = Fk if v is None else spectrum(v, n)
    mq = ag.cabs(energy_gate(Fq, params.query))
    mk = ag.cabs(energy_gate(Fk, params.key))
    alpha = ag.masked_softmax(ag.einsum("bf,bjf->bj", mq, mk), mask)
    agg = _aggregate(energy_gate(Fv, params.value), alpha)
    return _to_time(agg, params.out_dim)


@dataclass
class GatParams:
    W_q: Parameter
    W_k: Parameter
    W_v: Parameter

    @classmethod
    def init(cls, q_dim, k_dim, v_dim, out_dim, rng, name="gat"):
        return cls(
            real_glorot(q_dim, out_dim, rng, f"{name}.W_q"),
            real_glorot(k_dim, out_dim, rng, f"{name}.W_k"),
            real_glorot(v_dim, out_dim, rng, f"{name}.W_v"),
        )

    @property
    def out_dim(self) -> int:
        return self.W_v.shape[1]

    def parameters(self):
        return [self.W_q, self.W_k, self.W_v]

    def forward(self, q, k, v, mask) -> Tensor:
        return gat_forward(self, q, k, v, mask)


def gat_forward(params: GatParams, q, k, v, mask) -> Tensor:
    """Scaled dot-product attention in the time domain."""
    mask = np.asarray(mask, dtype=bool)
    _check_inputs(q, k, v, mask)
    qp = ag.matmul(q, params.W_q)
    kp = ag.matmul(k, params.W_k)
    vp = ag.matmul(k if v is None else v, params.W_v)
    scores = ag.mul(ag.einsum("bd,bjd->bj", qp, kp), 1.0 / np.sqrt(params.out_dim))
    alpha = ag.masked_softmax(scores, mask)
    return ag.einsum("bjd,bj->bd", vp, alpha)


# --------------------------------------------------------------------------
# Single-node interface


@dataclass
class AttentionInput:
    query: np.ndarray
    keys: np.ndarray
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        kshape, vshape = np.shape(ag._value(self.keys)), np.shape(ag._value(self.values))
        if len(kshape) != 2 or len(vshape) != 2 or kshape[0] != vshape[0]:
            raise DimensionError(f"keys {kshape} and values {vshape} must be (N, dim) with equal N")
        if self.mask.shape != (kshape[0],):
            raise DimensionError(f"mask {self.mask.shape} must have one entry per neighbor")

    def batched(self):
        return (
            ag.reshape(self.query, (1, -1)),
            ag.reshape(self.keys, (1,) + np.shape(ag._value(self.keys))),
            ag.reshape(self.values, (1,) + np.shape(ag._value(self.values))),
            self.mask[None, :],
        )


def fgat_layer(inp: AttentionInput, params: FgatParams) -> Tensor:
    return ag.reshape(fgat_forward(params, *inp.batched()), (-1,))


def fgat_n_layer(inp: AttentionInput, params: FgatNParams) -> Tensor:
    return ag.reshape(fgat_n_forward(params, *inp.batched()), (-1,))


def gat_layer(inp: AttentionInput, params: GatParams) -> Tensor:
    return ag.reshape(gat_forward(params, *inp.batched()), (-1,))
