"""Two-branch temporal encoder and link decoder.

For a query ``(node i, time t)`` with recent neighbors ``j`` at times ``t_j``:

* time branch: query ``phi(0)``, keys and values ``phi(t - t_j)``;
* attribute branch: query ``[Z_prev | S_i]``, keys and values ``[e_j | S_j]``,
  where ``Z_prev`` is the node state zero-padded (or cut) to the embedding
  width;
* output ``Z = Z_prev + ReLU(FFN([Z_time | Z_attr]))``.

By default the time branch uses plain FGAT and the attribute branch the
energy-gated FGAT_N. ``attention="fgat"`` uses FGAT in both, ``"gat"`` uses
time-domain attention in both.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .encodings import TimeEncoder
from .errors import DimensionError, InvalidArgumentError
from .fgat import FgatNParams, FgatParams, GatParams, real_glorot
from .graph import check_mode
from .spectral import next_power_of_two
from .state import DYNAMICS, StateStore, make_dynamics, recompute_states, update_input_dim

ATTENTION = ("fgat_n", "fgat", "gat")


@dataclass
class ModelConfig:
    dim: int = 100
    time_dim: int = 100
    edge_dim: int = 0
    node_dim: int = 0
    neighbors: int = 12
    theta: float = 0.2
    gate_rule: str = "energy"
    attention: str = "fgat_n"
    dynamics: str = "frequency"
    mode: str = "ctdg"
    window: float | None = None
    time_base: float = 10.0

    def __post_init__(self):
        check_mode(self.mode)
        if self.attention not in ATTENTION:
            raise InvalidArgumentError(f"attention must be one of {ATTENTION}, got {self.attention!r}")
        if self.dynamics not in DYNAMICS:
            raise InvalidArgumentError(f"dynamics must be one of {DYNAMICS}, got {self.dynamics!r}")
        for name in ("dim", "time_dim", "neighbors"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be positive")
        if self.edge_dim < 0 or self.node_dim < 0:
            raise InvalidArgumentError("feature widths must be non-negative")

    @property
    def state_dim(self) -> int:
        return self.dim

    @property
    def update_dim(self) -> int:
        return update_input_dim(self.state_dim, self.time_dim, self.edge_dim, self.node_dim)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


class Linear:
    def __init__(self, fan_in, fan_out, rng, name):
        self.W = real_glorot(fan_in, fan_out, rng, f"{name}.W")
        self.b = Parameter(np.zeros(fan_out), f"{name}.b")

    def parameters(self):
        return [self.W, self.b]

    def __call__(self, x) -> Tensor:
        return ag.add(ag.matmul(x, self.W), self.b)


class LinkDecoder:
    """logit = w2 . ReLU(W1 [z_src | z_dst] + b1) + b2."""

    def __init__(self, dim: int, rng, name: str = "decoder"):
        self.dim = dim
        self.hidden = Linear(2 * dim, dim, rng, f"{name}.hidden")
        self.out = Linear(dim, 1, rng, f"{name}.out")

    def parameters(self):
        return self.hidden.parameters() + self.out.parameters()

    def __call__(self, z_src, z_dst) -> Tensor:
        a, b = ag._value(z_src), ag._value(z_dst)
        if a.shape != b.shape or a.shape[-1] != self.dim:
            raise DimensionError(f"decoder expects two (..., {self.dim}) inputs, got {a.shape} and {b.shape}")
        h = ag.relu(self.hidden(ag.concat([z_src, z_dst], axis=-1)))
        return ag.reshape(self.out(h), a.shape[:-1])


def decode_link(z_src, z_dst, decoder: LinkDecoder) -> Tensor:
    return decoder(z_src, z_dst)


class UniDyGModel:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = c = config
        rng = np.random.default_rng(seed)
        self.time_encoder = TimeEncoder(c.time_dim, c.time_base)
        self.q_attr_dim = c.dim + c.state_dim
        self.k_attr_dim = c.edge_dim + c.state_dim
        self.n_time = next_power_of_two(max(c.time_dim, c.dim))
        self.n_attr = next_power_of_two(max(self.q_attr_dim, self.k_attr_dim, c.dim))
        if c.attention == "gat":
            self.time_attn = GatParams.init(c.time_dim, c.time_dim, c.time_dim, c.dim, rng, "time")
            self.attr_attn = GatParams.init(self.q_attr_dim, self.k_attr_dim, self.k_attr_dim, c.dim, rng, "attr")
        else:
            self.time_attn = FgatParams.init(self.n_time, c.dim, rng, "time")
            if c.attention == "fgat_n":
                self.attr_attn = FgatNParams.init(self.n_attr, c.dim, rng, c.theta, c.gate_rule, "attr")
            else:
                self.attr_attn = FgatParams.init(self.n_attr, c.dim, rng, "attr")
        self.ffn1 = Linear(2 * c.dim, 2 * c.dim, rng, "ffn1")
        self.ffn2 = Linear(2 * c.dim, c.dim, rng, "ffn2")
        self.dynamics = make_dynamics(c.dynamics, c.update_dim, c.state_dim, rng)
        self.decoder = LinkDecoder(c.dim, rng)

    def parameters(self) -> list[Parameter]:
        return (self.time_attn.parameters() + self.attr_attn.parameters() + self.ffn1.parameters()
                + self.ffn2.parameters() + self.dynamics.parameters() + self.decoder.parameters())

    def named_parameters(self) -> dict[str, Parameter]:
        out = {}
        for p in self.parameters():
            if p.name in out:
                raise RuntimeError(f"duplicate parameter name {p.name}")
            out[p.name] = p
        return out

    def state_values(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.named_parameters().items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        if set(params) != set(values):
            raise InvalidArgumentError("parameter names do not match the model")
        for k, p in params.items():
            v = np.asarray(values[k], dtype=np.float64)
            if v.shape != p.shape:
                raise DimensionError(f"{k}: shape {v.shape} != {p.shape}")
            p.value[...] = v

    # ------------------------------------------------------------------
    def new_state_store(self, capacity: int = 0) -> StateStore:
        return StateStore(self.config.state_dim, self.config.update_dim, capacity)

    def embed(self, nodes, times, states: StateStore, neighbors) -> Tensor:
        """Embeddings ``(B, dim)`` for query pairs ``(nodes[b], times[b])``.

        Repeated pairs are computed once. ``neighbors`` is any object with a
        ``sample(nodes, times, N)`` method (a neighbor store or its audit
        wrapper).
        """
        c = self.config
        nodes = np.asarray(nodes, dtype=np.int64).reshape(-1)
        times = np.asarray(times, dtype=np.float64).reshape(-1)
        if nodes.size == 0:
            return Tensor(np.zeros((0, c.dim)))
        keys = np.stack([nodes.astype(np.float64), times], axis=1)
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        q_nodes = uniq[:, 0].astype(np.int64)
        q_times = uniq[:, 1]
        Z = self._embed_unique(q_nodes, q_times, states, neighbors)
        if uniq.shape[0] == nodes.size and np.array_equal(inverse, np.arange(nodes.size)):
            return Z
        return ag.take(Z, inverse, axis=0)

    def _embed_unique(self, q_nodes, q_times, states, neighbors) -> Tensor:
        c = self.config
        nb = neighbors.sample(q_nodes, q_times, c.neighbors)
        U = q_nodes.size

        # states of every node involved, recomputed once each
        involved = np.concatenate([q_nodes, nb.ids[nb.mask]])
        uniq_nodes, pos = np.unique(involved, return_inverse=True)
        S_table = recompute_states(states, uniq_nodes, self.dynamics)
        S_q = ag.take(S_table, pos[:U], axis=0)
        nb_pos = np.zeros(nb.ids.shape, dtype=np.int64)
        nb_pos[nb.mask] = pos[U:]
        S_nb = ag.mul(ag.take(S_table, nb_pos, axis=0), nb.mask[..., None].astype(np.float64))

        # time branch
        dt = np.where(nb.mask, q_times[:, None] - nb.times, 0.0)
        q_time = np.broadcast_to(self.time_encoder(0.0), (U, c.time_dim))
        k_time = self.time_encoder(dt)
        z_time = self.time_attn.forward(q_time, k_time, None, nb.mask)

        # attribute branch
        z_prev = ag.pad_last(S_q, c.dim)
        q_attr = ag.concat([z_prev, S_q], axis=-1)
        k_attr = ag.concat([nb.feats, S_nb], axis=-1) if c.edge_dim else S_nb
        z_attr = self.attr_attn.forward(q_attr, k_attr, None, nb.mask)

        h = ag.relu(self.ffn1(ag.concat([z_time, z_attr], axis=-1)))
        return ag.add(z_prev, ag.relu(self.ffn2(h)))

    def embed_batch(self, nodes, times, states, neighbors) -> list[np.ndarray]:
        Z = self.embed(nodes, times, states, neighbors).value
        return [row for row in Z]

    def score(self, src, dst, times, states, neighbors) -> Tensor:
        """Logits for pairs (src[b], dst[b]) at times[b]."""
        src = np.asarray(src, dtype=np.int64)
        Z = self.embed(np.concatenate([src, dst]), np.concatenate([times, times]), states, neighbors)
        n = src.size
        return self.decoder(ag.getitem(Z, slice(0, n)), ag.getitem(Z, slice(n, 2 * n)))

    # ------------------------------------------------------------------
    def save(self, directory, extra: dict | None = None) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        values = self.state_values()
        np.savez(d / "params.npz", **values)
        meta = {
            "config": self.config.to_dict(),
            "time_encoder": self.time_encoder.config(),
            "shapes": {k: list(v.shape) for k, v in values.items()},
        }
        if extra:
            meta.update(extra)
        (d / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory) -> "UniDyGModel":
        d = Path(directory)
        meta = json.loads((d / "model.json").read_text())
        model = cls(ModelConfig.from_dict(meta["config"]))
        with np.load(d / "params.npz") as z:
            values = {k: z[k] for k in z.files}
        for k, shape in meta["shapes"].items():
            if list(values[k].shape) != shape:
                raise DimensionError(f"{k}: stored shape {values[k].shape} != header {shape}")
        model.load_values(values)
        return model
