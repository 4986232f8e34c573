"""Link-prediction training and streaming evaluation.

Every pass over the data (training epoch, validation, test replay) starts or
continues a stream: embeddings for a batch are computed against the stores as
they were before the batch, then the batch is applied to the state table and
the neighbor store. In discrete-time mode the stores advance once per
snapshot.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import AdamState, Tape, adam_step
from .encoder import ModelConfig, UniDyGModel
from .errors import InvalidArgumentError, NumericError
from .graph import (
    EventStream,
    LeakageAudit,
    Split,
    SplitConfig,
    TemporalNeighborStore,
    check_mode,
    chronological_split,
    mask_inductive_nodes,
    training_batches,
)
from .metrics import ap, auc, mrr
from .state import StateStore, flush_batch_updates

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    mode: str = "ctdg"
    batch_size: int = 600
    neighbors: int = 12
    theta: float = 0.2
    lr: float = 1e-4
    dim: int = 100
    time_dim: int = 100
    epochs: int = 50
    patience: int = 5
    seed: int = 0
    attention: str = "fgat_n"
    dynamics: str = "frequency"
    gate_rule: str = "energy"
    window: float | None = None
    mrr_negatives: int = 100
    val_mrr: bool | None = None  # None: only in dtdg mode
    test_mrr: bool | None = None  # None: only in dtdg mode
    train_frac: float = 0.70
    val_frac: float = 0.15
    test_frac: float = 0.15
    inductive_frac: float = 0.10
    audit: bool = True

    def __post_init__(self):
        check_mode(self.mode)
        for name in ("batch_size", "neighbors", "dim", "time_dim", "epochs", "patience", "mrr_negatives"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr < 0:
            raise InvalidArgumentError(f"learning rate must be non-negative, got {self.lr}")
        if self.theta < 0:
            raise InvalidArgumentError(f"theta must be non-negative, got {self.theta}")
        ModelConfig(attention=self.attention, dynamics=self.dynamics, mode=self.mode)

    @property
    def use_val_mrr(self) -> bool:
        return self.mode == "dtdg" if self.val_mrr is None else bool(self.val_mrr)

    @property
    def use_test_mrr(self) -> bool:
        return self.mode == "dtdg" if self.test_mrr is None else bool(self.test_mrr)

    def split_config(self) -> SplitConfig:
        return SplitConfig(self.train_frac, self.val_frac, self.test_frac, self.inductive_frac, self.seed)

    def model_config(self, edge_dim: int) -> ModelConfig:
        return ModelConfig(dim=self.dim, time_dim=self.time_dim, edge_dim=edge_dim, neighbors=self.neighbors,
                           theta=self.theta, gate_rule=self.gate_rule, attention=self.attention,
                           dynamics=self.dynamics, mode=self.mode, window=self.window)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise InvalidArgumentError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def sample_negatives(dst, universe, k: int, rng) -> np.ndarray:
    """``(len(dst), k)`` destinations drawn uniformly from ``universe`` minus the true one."""
    dst = np.asarray(dst, dtype=np.int64).reshape(-1)
    universe = np.unique(np.asarray(universe, dtype=np.int64))
    if universe.size == 0:
        raise InvalidArgumentError("node universe is empty")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    pos = np.searchsorted(universe, dst)
    inside = (pos < universe.size) & (universe[np.minimum(pos, universe.size - 1)] == dst)
    if universe.size == 1 and inside.any():
        raise InvalidArgumentError("cannot draw a negative from a universe holding only the true destination")
    # draw from universe minus the true node by skipping over its slot
    width = np.where(inside, universe.size - 1, universe.size)
    r = np.floor(rng.random((dst.size, k)) * width[:, None]).astype(np.int64)
    r = r + (inside[:, None] & (r >= pos[:, None]))
    return universe[r]


def bce_loss(pos_logits, neg_logits) -> ag.Tensor:
    pos_n = np.shape(ag._value(pos_logits))[0]
    neg_n = np.shape(ag._value(neg_logits))[0]
    labels = np.concatenate([np.ones(pos_n), np.zeros(neg_n)])
    return ag.bce_with_logits(ag.concat([pos_logits, neg_logits], axis=0), labels)


# --------------------------------------------------------------------------
# Data preparation


@dataclass
class PreparedData:
    stream: EventStream
    split: Split
    train: EventStream  # training events with held-out nodes removed
    held_out: np.ndarray
    nodes: np.ndarray
    train_nodes: np.ndarray
    negatives: dict = field(default_factory=dict)

    @property
    def num_nodes(self) -> int:
        return int(self.nodes.max()) + 1 if self.nodes.size else 0

    @property
    def d_e(self) -> int:
        return self.stream.d_e

    def save_negatives(self, path) -> None:
        np.savez(Path(path), held_out=self.held_out, **self.negatives)

    def sidecar(self) -> dict:
        return {
            "k1": self.split.k1,
            "k2": self.split.k2,
            "t1": self.split.t1,
            "t2": self.split.t2,
            "events": len(self.stream),
            "nodes": int(self.nodes.size),
            "held_out_nodes": self.held_out.tolist(),
        }


def prepare_data(stream: EventStream, config: TrainConfig) -> PreparedData:
    split = chronological_split(stream, config.split_config(), config.mode)
    nodes = stream.nodes()
    if config.inductive_frac > 0:
        train, held = mask_inductive_nodes(split.train, config.inductive_frac, config.seed, nodes=nodes)
    else:
        train, held = split.train, np.zeros(0, dtype=np.int64)
    if not len(train):
        raise InvalidArgumentError("masking removed every training event")
    data = PreparedData(stream, split, train, held, nodes, train.nodes())
    # evaluation negatives are drawn once per seed and reused by every pass
    rng = np.random.default_rng([config.seed, 20240])
    for name, part in (("val", split.val), ("test", split.test)):
        data.negatives[f"{name}_neg"] = sample_negatives(part.dst, nodes, 1, rng)[:, 0]
        want = config.use_val_mrr if name == "val" else config.use_test_mrr
        if want:
            data.negatives[f"{name}_neg_mrr"] = sample_negatives(part.dst, nodes, config.mrr_negatives, rng)
    return data


# --------------------------------------------------------------------------
# Streaming helpers


class Streams:
    """The mutable stores a pass runs against."""

    def __init__(self, model: UniDyGModel, data: PreparedData, audit: bool):
        self.model = model
        self.states: StateStore = model.new_state_store(data.num_nodes)
        base = TemporalNeighborStore(data.d_e, model.config.window)
        self.neighbors = LeakageAudit(base) if audit else base

    def advance(self, events: EventStream):
        flush_batch_updates(self.states, events, self.model.dynamics, self.model.time_encoder,
                            self.model.config.mode)
        self.neighbors.ingest(events)


def _dump_batch(batch: EventStream, neg, loss, out_dir) -> str:
    target = Path(out_dir) if out_dir else Path.cwd()
    target.mkdir(parents=True, exist_ok=True)
    path = target / "nonfinite_batch.json"
    path.write_text(json.dumps({
        "loss": repr(loss),
        "src": batch.src.tolist(), "dst": batch.dst.tolist(), "t": batch.t.tolist(),
        "feats": batch.feats.tolist(), "neg": np.asarray(neg).tolist(),
    }))
    return str(path)


def train_epoch(model: UniDyGModel, data: PreparedData, config: TrainConfig, opt: AdamState, epoch: int,
                streams: Streams, out_dir=None) -> float:
    rng = np.random.default_rng([config.seed, epoch, 1])
    params = model.parameters()
    total, count = 0.0, 0
    stream = data.train
    for unit in training_batches(stream, config.batch_size, config.mode):
        for sl in unit:
            b = stream[sl]
            n = len(b)
            neg = sample_negatives(b.dst, data.train_nodes, 1, rng)[:, 0]
            with Tape() as tape:
                Z = model.embed(np.concatenate([b.src, b.dst, neg]), np.concatenate([b.t, b.t, b.t]),
                                streams.states, streams.neighbors)
                z_src = ag.getitem(Z, slice(0, n))
                pos = model.decoder(z_src, ag.getitem(Z, slice(n, 2 * n)))
                negl = model.decoder(z_src, ag.getitem(Z, slice(2 * n, 3 * n)))
                loss = bce_loss(pos, negl)
            value = loss.item()
            if not np.isfinite(value):
                where = _dump_batch(b, neg, value, out_dir)
                raise NumericError(f"non-finite loss {value} at epoch {epoch}; batch dumped to {where}")
            ag.backward(tape, loss)
            adam_step(params, opt, config.lr)
            total += value * n
            count += n
        streams.advance(stream[unit[0].start:unit[-1].stop])
    return total / max(count, 1)


def _decode_rows(model, z_src, z_dst, chunk=65536) -> np.ndarray:
    out = np.empty(z_src.shape[0])
    for a in range(0, z_src.shape[0], chunk):
        out[a:a + chunk] = model.decoder(z_src[a:a + chunk], z_dst[a:a + chunk]).value
    return out


def stream_scores(model: UniDyGModel, stream: EventStream, neg, neg_mrr, config: TrainConfig,
                  streams: Streams) -> dict:
    """Score every event of ``stream`` (positive, one negative, optional MRR
    negatives) while advancing the stores through it."""
    pos_all = np.empty(len(stream))
    neg_all = np.empty(len(stream))
    mrr_all = None if neg_mrr is None else np.empty(neg_mrr.shape)
    with ag.no_grad():
        for unit in training_batches(stream, config.batch_size, config.mode):
            for sl in unit:
                b = stream[sl]
                n = len(b)
                parts = [b.src, b.dst, neg[sl]]
                tparts = [b.t, b.t, b.t]
                if mrr_all is not None:
                    k = neg_mrr.shape[1]
                    parts.append(neg_mrr[sl].reshape(-1))
                    tparts.append(np.repeat(b.t, k))
                Z = model.embed(np.concatenate(parts), np.concatenate(tparts), streams.states,
                                streams.neighbors).value
                zs = Z[:n]
                pos_all[sl] = _decode_rows(model, zs, Z[n:2 * n])
                neg_all[sl] = _decode_rows(model, zs, Z[2 * n:3 * n])
                if mrr_all is not None:
                    zk = Z[3 * n:].reshape(n, k, -1)
                    mrr_all[sl] = _decode_rows(model, np.repeat(zs, k, axis=0), zk.reshape(n * k, -1)).reshape(n, k)
            streams.advance(stream[unit[0].start:unit[-1].stop])
    return {"pos": pos_all, "neg": neg_all, "neg_mrr": mrr_all}


def summarize(scores: dict, select=None) -> dict:
    pos, neg, nm = scores["pos"], scores["neg"], scores["neg_mrr"]
    if select is not None:
        pos, neg = pos[select], neg[select]
        nm = None if nm is None else nm[select]
    if pos.size == 0:
        return {"auc": None, "ap": None, "mrr": None, "count": 0}
    return {
        "auc": auc(pos, neg),
        "ap": ap(pos, neg),
        "mrr": None if nm is None else mrr(pos, nm),
        "count": int(pos.size),
    }


def evaluate(model: UniDyGModel, data: PreparedData, config: TrainConfig) -> dict:
    """Test metrics from a fresh replay of the (masked) training and validation streams."""
    return evaluate_streaming(model, data, config)[0]


def evaluate_streaming(model: UniDyGModel, data: PreparedData, config: TrainConfig):
    streams = Streams(model, data, config.audit)
    with ag.no_grad():
        for part in (data.train, data.split.val):
            for unit in training_batches(part, config.batch_size, config.mode):
                streams.advance(part[unit[0].start:unit[-1].stop])
    test = data.split.test
    scores = stream_scores(model, test, data.negatives["test_neg"], data.negatives.get("test_neg_mrr"),
                           config, streams)
    inductive = np.isin(test.src, data.held_out) | np.isin(test.dst, data.held_out)
    result = {"transductive": summarize(scores), "inductive": summarize(scores, inductive)}
    result["audit"] = _audit_counts(streams)
    return result, streams


def _audit_counts(streams: Streams) -> dict | None:
    nb = streams.neighbors
    if isinstance(nb, LeakageAudit):
        return {"queries": nb.queries, "neighbors": nb.neighbors, "violations": 0}
    return None


@dataclass
class TrainResult:
    model: UniDyGModel
    history: list
    best_epoch: int
    test: dict
    data: PreparedData
    audit: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {"best_epoch": self.best_epoch, "epochs_run": len(self.history), "test": self.test,
                "audit": self.audit}


def _round_floats(obj):
    return json.loads(json.dumps(obj))


def train(config: TrainConfig, stream: EventStream, out_dir=None, data: PreparedData | None = None,
          progress=None) -> TrainResult:
    """Train with early stopping on validation AP (ctdg) or MRR (dtdg) and
    report test metrics of the best epoch."""
    data = data or prepare_data(stream, config)
    model = UniDyGModel(config.model_config(data.d_e), seed=config.seed)
    opt = AdamState()
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.jsonl").write_text("")
    history = []
    best_value, best_epoch, best_params, stale = -np.inf, 0, model.state_values(), 0
    audit = {"queries": 0, "neighbors": 0, "violations": 0}
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        streams = Streams(model, data, config.audit)
        loss = train_epoch(model, data, config, opt, epoch, streams, out)
        val_scores = stream_scores(model, data.split.val, data.negatives["val_neg"],
                                   data.negatives.get("val_neg_mrr"), config, streams)
        val = summarize(val_scores)
        counts = _audit_counts(streams)
        if counts:
            audit["queries"] += counts["queries"]
            audit["neighbors"] += counts["neighbors"]
        record = {"epoch": epoch, "loss": loss, "val_auc": val["auc"], "val_ap": val["ap"],
                  "val_mrr": val["mrr"], "seconds": time.perf_counter() - started}
        history.append(record)
        if out:
            with (out / "metrics.jsonl").open("a") as fh:
                fh.write(json.dumps(record) + "\n")
        if progress:
            progress(record)
        log.info("epoch %d loss %.5f val_auc %.4f val_ap %.4f", epoch, loss, val["auc"], val["ap"])
        target = val["mrr"] if config.mode == "dtdg" and val["mrr"] is not None else val["ap"]
        if target > best_value:
            best_value, best_epoch, best_params, stale = target, epoch, model.state_values(), 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.load_values(best_params)
    test, streams = evaluate_streaming(model, data, config)
    counts = test.pop("audit")
    if counts:
        audit["queries"] += counts["queries"]
        audit["neighbors"] += counts["neighbors"]
    result = TrainResult(model, history, best_epoch, test, data, audit)
    if out:
        model.save(out / "checkpoint", {"train_config": config.to_dict(), "best_epoch": best_epoch})
        streams.states.save(out / "checkpoint" / "states.npz")
        data.save_negatives(out / "negatives.npz")
        (out / "split.json").write_text(json.dumps(data.sidecar(), indent=2) + "\n")
        (out / "summary.json").write_text(json.dumps(_round_floats(result.summary()), indent=2, sort_keys=True) + "\n")
    return result
