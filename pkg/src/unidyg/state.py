"""Per-node memory: messages, the state update function and the state table.

A node's update input is ``[S(t-) | m | phi(t - t-) | x]``. For continuous-time
graphs the message is ``m = [S(t-) | phi(t - t-) | e]``; discrete-time graphs
use a zero message. The frequency update maps the input through a DFT, a
per-frequency complex weight and an inverse DFT, then squashes the real part
with a logistic sigmoid.

The table keeps, besides each state, the update input that produced it. The
encoder recomputes states from these inputs on the tape so that the update
weights receive gradients from the link-prediction loss, one update deep.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .encodings import TimeEncoder
from .errors import DimensionError, InvalidArgumentError, ModeViolationError, TemporalOrderError
from .fgat import complex_glorot, real_glorot, spectrum
from .graph import Event, EventStream, check_mode
from .spectral import next_power_of_two

DYNAMICS = ("frequency", "time-linear")


@dataclass
class NodeState:
    S: np.ndarray
    t_last: float = 0.0
    message: np.ndarray | None = None


def update_input_dim(state_dim: int, time_dim: int, edge_dim: int, node_dim: int = 0) -> int:
    message_dim = state_dim + time_dim + edge_dim
    return state_dim + message_dim + time_dim + node_dim


class FrequencyDynamics:
    """S = sigmoid(Re(idft(W_d * dft(input)))) truncated to the state width."""

    kind = "frequency"

    def __init__(self, in_dim: int, state_dim: int, rng=None, W_d: Parameter | None = None):
        self.in_dim = int(in_dim)
        self.state_dim = int(state_dim)
        self.n = next_power_of_two(max(self.in_dim, self.state_dim))
        if W_d is None:
            W_d = complex_glorot(self.n, rng or np.random.default_rng(0), "dynamics.W_d")
        if W_d.shape != (2, self.n):
            raise DimensionError(f"W_d must have shape (2, {self.n}), got {W_d.shape}")
        self.W_d = W_d

    def parameters(self):
        return [self.W_d]

    def __call__(self, inputs) -> Tensor:
        if ag._value(inputs).shape[-1] != self.in_dim:
            raise DimensionError(f"update input width {ag._value(inputs).shape[-1]} != {self.in_dim}")
        z = ag.ifft(ag.cmul(self.W_d, spectrum(inputs, self.n)))
        return ag.sigmoid(ag.getitem(z, (0, Ellipsis, slice(0, self.state_dim))))


class LinearDynamics:
    """Time-domain ablation: S = sigmoid(input @ W)."""

    kind = "time-linear"

    def __init__(self, in_dim: int, state_dim: int, rng=None, W: Parameter | None = None):
        self.in_dim = int(in_dim)
        self.state_dim = int(state_dim)
        if W is None:
            W = real_glorot(self.in_dim, self.state_dim, rng or np.random.default_rng(0), "dynamics.W")
        if W.shape != (self.in_dim, self.state_dim):
            raise DimensionError(f"W must have shape ({self.in_dim}, {self.state_dim}), got {W.shape}")
        self.W = W

    def parameters(self):
        return [self.W]

    def __call__(self, inputs) -> Tensor:
        return ag.sigmoid(ag.matmul(inputs, self.W))


def make_dynamics(kind: str, in_dim: int, state_dim: int, rng):
    if kind == "frequency":
        return FrequencyDynamics(in_dim, state_dim, rng)
    if kind == "time-linear":
        return LinearDynamics(in_dim, state_dim, rng)
    raise InvalidArgumentError(f"dynamics must be one of {DYNAMICS}, got {kind!r}")


class StateStore:
    """Dense state table indexed by node id; unseen nodes read as zero at t- = 0."""

    def __init__(self, state_dim: int, input_dim: int, capacity: int = 0):
        self.state_dim = int(state_dim)
        self.input_dim = int(input_dim)
        self._alloc(max(int(capacity), 16))

    def _alloc(self, cap):
        self.S = np.zeros((cap, self.state_dim))
        self.t_last = np.zeros(cap)
        self.inputs = np.zeros((cap, self.input_dim))
        self.updated = np.zeros(cap, dtype=bool)

    def reset(self):
        self._alloc(self.S.shape[0])

    @property
    def capacity(self) -> int:
        return self.S.shape[0]

    def _grow(self, max_id: int):
        if max_id < self.capacity:
            return
        cap = max(max_id + 1, 2 * self.capacity)
        old = (self.S, self.t_last, self.inputs, self.updated)
        self._alloc(cap)
        n = old[0].shape[0]
        self.S[:n], self.t_last[:n], self.inputs[:n], self.updated[:n] = old

    def get(self, node: int) -> NodeState:
        node = int(node)
        if 0 <= node < self.capacity and self.updated[node]:
            return NodeState(self.S[node].copy(), float(self.t_last[node]))
        return NodeState(np.zeros(self.state_dim), 0.0)

    def gather(self, ids):
        """States and last-update times for ``ids``; ids of -1 or unseen nodes read as defaults."""
        ids = np.asarray(ids, dtype=np.int64)
        ok = (ids >= 0) & (ids < self.capacity)
        safe = np.where(ok, ids, 0)
        S = np.where(ok[..., None], self.S[safe], 0.0)
        t = np.where(ok, self.t_last[safe], 0.0)
        return S, t

    def has_input(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        ok = (ids >= 0) & (ids < self.capacity)
        return ok & self.updated[np.where(ok, ids, 0)]

    def set(self, ids, S, t, inputs):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size == 0:
            return
        if np.unique(ids).size != ids.size:
            raise InvalidArgumentError("state writes must touch each node at most once")
        self._grow(int(ids.max()))
        t = np.asarray(t, dtype=np.float64)
        prev = self.t_last[ids]
        if np.any(t < prev):
            i = int(np.argmax(t < prev))
            raise TemporalOrderError(f"node {int(ids[i])}: update at t={t[i]} precedes last update t={prev[i]}")
        self.S[ids] = S
        self.t_last[ids] = t
        self.inputs[ids] = inputs
        self.updated[ids] = True

    def copy(self) -> "StateStore":
        out = StateStore(self.state_dim, self.input_dim, self.capacity)
        out.S[:], out.t_last[:], out.inputs[:], out.updated[:] = self.S, self.t_last, self.inputs, self.updated
        return out

    def save(self, path) -> None:
        ids = np.flatnonzero(self.updated)
        np.savez(Path(path), node_ids=ids, t_last=self.t_last[ids], S=self.S[ids], inputs=self.inputs[ids],
                 dims=np.array([self.state_dim, self.input_dim]))

    @classmethod
    def load(cls, path) -> "StateStore":
        with np.load(Path(path)) as z:
            state_dim, input_dim = (int(v) for v in z["dims"])
            ids = z["node_ids"]
            store = cls(state_dim, input_dim, int(ids.max()) + 1 if ids.size else 0)
            store.set(ids, z["S"], z["t_last"], z["inputs"])
        return store


def build_messages(S_prev, t_prev, t, feats, encoder: TimeEncoder) -> np.ndarray:
    """Rows of [S(t-) | phi(t - t-) | e]."""
    return np.concatenate([S_prev, encoder(np.asarray(t) - np.asarray(t_prev)), feats], axis=-1)


def build_update_inputs(S_prev, messages, t_prev, t, node_feats, encoder: TimeEncoder) -> np.ndarray:
    return np.concatenate([S_prev, messages, encoder(np.asarray(t) - np.asarray(t_prev)), node_feats], axis=-1)


def compute_message(event: Event, store: StateStore, encoder: TimeEncoder, mode: str = "ctdg",
                    side: str = "src") -> np.ndarray:
    """Message for one endpoint of an event, from that endpoint's pre-event state."""
    if check_mode(mode) == "dtdg":
        raise ModeViolationError("discrete-time graphs do not use the message function")
    node = event.src if side == "src" else event.dst
    st = store.get(node)
    if event.t < st.t_last:
        raise TemporalOrderError(f"event at t={event.t} precedes node {node}'s last update {st.t_last}")
    return build_messages(st.S, st.t_last, event.t, np.asarray(event.edge_features, dtype=np.float64), encoder)


def update_state(state: NodeState, m, t: float, x, dynamics, encoder: TimeEncoder) -> NodeState:
    if t < state.t_last:
        raise TemporalOrderError(f"update at t={t} precedes last update t={state.t_last}")
    inp = build_update_inputs(state.S, np.asarray(m, dtype=np.float64), state.t_last, t,
                              np.asarray(x, dtype=np.float64), encoder)
    with ag.no_grad():
        S = dynamics(inp[None, :]).value[0]
    return NodeState(S, float(t))


def _latest_per_node(batch: EventStream):
    """Each touched node with the row of its most recent appearance.

    Endpoints are visited event by event (source before destination), so
    among equal timestamps the later event wins.
    """
    nodes = np.stack([batch.src, batch.dst], axis=1).reshape(-1)
    rows = np.repeat(np.arange(len(batch)), 2)
    rev = nodes[::-1]
    uniq, first_rev = np.unique(rev, return_index=True)
    last = nodes.size - 1 - first_rev
    return uniq, rows[last]


def flush_batch_updates(store: StateStore, batch: EventStream, dynamics, encoder: TimeEncoder, mode: str,
                        node_features: np.ndarray | None = None) -> StateStore:
    """Apply one state update to every node touched by ``batch``.

    Must run after the batch's embeddings were computed. A node seen several
    times updates once, from its most recent event.
    """
    check_mode(mode)
    if not len(batch):
        return store
    nodes, rows = _latest_per_node(batch)
    t = batch.t[rows]
    S_prev, t_prev = store.gather(nodes)
    if np.any(t < t_prev):
        i = int(np.argmax(t < t_prev))
        raise TemporalOrderError(f"node {int(nodes[i])}: event at t={t[i]} precedes last update {t_prev[i]}")
    if mode == "ctdg":
        messages = build_messages(S_prev, t_prev, t, batch.feats[rows], encoder)
    else:
        messages = np.zeros((nodes.size, store.state_dim + encoder.dim + batch.d_e))
    x = node_features[nodes] if node_features is not None else np.zeros((nodes.size, 0))
    inputs = build_update_inputs(S_prev, messages, t_prev, t, x, encoder)
    with ag.no_grad():
        S_new = dynamics(inputs).value
    store.set(nodes, S_new, t, inputs)
    return store


def recompute_states(store: StateStore, ids, dynamics) -> Tensor:
    """States of ``ids`` rebuilt from their stored update inputs with the
    current dynamics weights (recorded on the active tape). Nodes without an
    update read as the zero vector."""
    ids = np.asarray(ids, dtype=np.int64)
    has = store.has_input(ids)
    if not has.any():
        return Tensor(np.zeros(ids.shape + (store.state_dim,)))
    rows = ids[has]
    fresh = dynamics(store.inputs[rows])
    # slot 0 is the zero state; node k with an input reads slot 1 + its rank
    table = ag.concat([np.zeros((1, store.state_dim)), fresh], axis=0)
    pos = np.zeros(ids.shape, dtype=np.int64)
    pos[has] = np.arange(1, rows.size + 1)
    return ag.take(table, pos, axis=0)
