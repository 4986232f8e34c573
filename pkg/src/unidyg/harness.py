"""Experiment harness: noise injection, sweeps, ablations, spectra and probes."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import autograd as ag
from .autograd import Parameter, grad_check
from .encoder import ModelConfig, UniDyGModel
from .encodings import TimeEncoder
from .errors import InvalidArgumentError
from .fgat import AttentionInput, FgatParams, fgat_layer
from .graph import EventStream, TemporalNeighborStore
from .state import flush_batch_updates
from .metrics import auc
from .spectral import dft, next_power_of_two
from .training import TrainConfig, bce_loss, sample_negatives, train

log = logging.getLogger(__name__)

DEFAULT_LEVELS = (0.0, 0.1, 0.2, 0.3, 0.4)
ABLATIONS = {
    "full": {},
    "w GAT": {"attention": "gat"},
    "w/o FGAT_N": {"attention": "fgat"},
    "w/o Global": {"dynamics": "time-linear"},
}


@dataclass(frozen=True)
class NoiseSpec:
    edge: float = 0.0  # fraction of events whose destination is replaced
    attr: float = 0.0  # fraction of events whose features are perturbed
    sigma: float = 1.0  # perturbation std in units of the per-feature std
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.edge <= 1 and 0 <= self.attr <= 1):
            raise InvalidArgumentError("noise fractions must lie in [0, 1]")
        if self.sigma < 0:
            raise InvalidArgumentError("noise scale must be non-negative")


def inject_noise(stream: EventStream, spec: NoiseSpec) -> EventStream:
    """Replace destinations of floor(edge * E) uniformly chosen events with a
    random node (never the source or the original destination) and add
    Gaussian noise to the features of floor(attr * E) events. Timestamps and
    the input stream are left untouched."""
    rng = np.random.default_rng(spec.seed)
    out = stream.copy()
    E = len(stream)
    n_edge = int(np.floor(spec.edge * E))
    if n_edge:
        universe = stream.nodes()
        if universe.size < 3:
            raise InvalidArgumentError("destination noise needs at least 3 nodes")
        idx = rng.choice(E, size=n_edge, replace=False)
        new = universe[rng.integers(0, universe.size, n_edge)]
        bad = (new == out.src[idx]) | (new == out.dst[idx])
        while bad.any():
            new[bad] = universe[rng.integers(0, universe.size, int(bad.sum()))]
            bad = (new == out.src[idx]) | (new == out.dst[idx])
        out.dst[idx] = new
    n_attr = int(np.floor(spec.attr * E))
    if n_attr and stream.d_e:
        idx = rng.choice(E, size=n_attr, replace=False)
        scale = spec.sigma * stream.feats.std(axis=0)
        out.feats[idx] += rng.standard_normal((n_attr, stream.d_e)) * scale
    return out


# --------------------------------------------------------------------------
# Spectra


def spectrum_table(stream: EventStream, window: int = 400, feature: int = 0) -> np.ndarray:
    """Rows ``(f, |X_feature(f)|, |X_interarrival(f)|)`` over the first ``window`` events."""
    if window < 1 or window > len(stream):
        raise InvalidArgumentError(f"window must lie in [1, {len(stream)}], got {window}")
    if not 0 <= feature < stream.d_e:
        raise InvalidArgumentError(f"feature index {feature} out of range for {stream.d_e} features")
    feat = stream.feats[:window, feature]
    gaps = np.diff(stream.t[:window], prepend=stream.t[0])
    Xf, Xg = dft(feat), dft(gaps)
    return np.column_stack([np.arange(window), np.hypot(Xf.re, Xf.im), np.hypot(Xg.re, Xg.im)])


def low_band_fraction(x, cutoff_frac: float = 1 / 8) -> float:
    """Share of one-sided spectral energy in bins below ``cutoff_frac * len(x)``."""
    x = np.asarray(x, dtype=np.float64)
    X = dft(x)
    energy = (X.re ** 2 + X.im ** 2)[: x.size // 2 + 1]
    total = energy.sum()
    if total == 0:
        return 1.0
    return float(energy[: int(np.ceil(cutoff_frac * x.size))].sum() / total)


# --------------------------------------------------------------------------
# Probes


def temporal_coherence_ratio(rng, time_dim: int = 16, n_neighbors: int = 4, delta: float = 2.0 ** -4) -> float:
    """||Z(t) - Z(t + delta/2)|| / ||Z(t) - Z(t + delta)|| for a random FGAT layer
    whose keys and values encode the time since each of a few past events."""
    enc = TimeEncoder(time_dim)
    params = FgatParams.init(next_power_of_two(time_dim), time_dim, rng)
    past = np.sort(rng.uniform(0.0, 5.0, n_neighbors))
    t = 5.0 + rng.uniform(0.5, 2.0)
    mask = np.ones(n_neighbors, dtype=bool)

    def Z(at):
        k = enc(at - past)
        return fgat_layer(AttentionInput(enc(0.0), k, k, mask), params).value

    base = Z(t)
    full = np.linalg.norm(Z(t + delta) - base)
    half = np.linalg.norm(Z(t + delta / 2) - base)
    return float(half / full) if full > 0 else 0.0


def parameter_slots(model: UniDyGModel) -> list[tuple[object, str]]:
    """(owner, attribute) for every trainable weight, in ``model.parameters()`` order."""
    owners = [model.time_attn]
    attr = model.attr_attn
    owners += [attr.query, attr.key, attr.value] if hasattr(attr, "query") else [attr]
    owners += [model.ffn1, model.ffn2, model.dynamics, model.decoder.hidden, model.decoder.out]
    slots = [(o, k) for o in owners for k, v in vars(o).items() if isinstance(v, Parameter)]
    if [getattr(o, k) for o, k in slots] != model.parameters():
        raise RuntimeError("parameter slots do not line up with model.parameters()")
    return slots


def toy_pipeline(config: ModelConfig, seed: int = 0, n_nodes: int = 6, warm: int = 10, batch: int = 4):
    """A small model with populated stores and one held-back batch of queries."""
    rng = np.random.default_rng(seed)
    n = warm + batch
    src = rng.integers(0, n_nodes, n)
    dst = (src + rng.integers(1, n_nodes, n)) % n_nodes
    stream = EventStream(src, dst, np.cumsum(rng.uniform(0.2, 1.0, n)), rng.standard_normal((n, config.edge_dim)))
    model = UniDyGModel(config, seed)
    states = model.new_state_store(n_nodes)
    nbrs = TemporalNeighborStore(config.edge_dim, config.window)
    head, tail = stream[:warm], stream[warm:]
    flush_batch_updates(states, head, model.dynamics, model.time_encoder, config.mode)
    nbrs.ingest(head)
    neg = sample_negatives(tail.dst, np.arange(n_nodes), 1, rng)[:, 0]
    return model, states, nbrs, tail, neg


def pipeline_loss(model, states, nbrs, batch, neg):
    k = len(batch)
    Z = model.embed(np.concatenate([batch.src, batch.dst, neg]), np.tile(batch.t, 3), states, nbrs)
    z_src = ag.getitem(Z, slice(0, k))
    pos = model.decoder(z_src, ag.getitem(Z, slice(k, 2 * k)))
    negl = model.decoder(z_src, ag.getitem(Z, slice(2 * k, 3 * k)))
    return bce_loss(pos, negl)


def pipeline_grad_check(config: ModelConfig, points: int = 20, seed: int = 0, scale: float = 0.5,
                        eps: float = 1e-6) -> float:
    """Worst relative gradient error of embed -> decode -> loss with respect to
    every model weight, over ``points`` random weight settings."""
    model, states, nbrs, batch, neg = toy_pipeline(config, seed)
    slots = parameter_slots(model)
    originals = [getattr(o, k) for o, k in slots]
    rng = np.random.default_rng([seed, 7])
    worst = 0.0
    for _ in range(points):
        start = [rng.standard_normal(p.shape) * scale for p in originals]

        def fn(*tensors):
            for (o, k), t in zip(slots, tensors):
                setattr(o, k, t)
            try:
                return pipeline_loss(model, states, nbrs, batch, neg)
            finally:
                for (o, k), p in zip(slots, originals):
                    setattr(o, k, p)

        worst = max(worst, grad_check(fn, start, eps=eps))
    return worst


# --------------------------------------------------------------------------
# Baselines and sweeps


def _logistic_fit(X, y, iters: int = 50, ridge: float = 1e-6):
    X = np.column_stack([np.ones(len(X)), X])
    w = np.zeros(X.shape[1])
    for _ in range(iters):
        p = 1.0 / (1.0 + np.exp(-X @ w))
        H = X.T @ (X * (p * (1 - p))[:, None]) + ridge * np.eye(X.shape[1])
        w -= np.linalg.solve(H, X.T @ (p - y) + ridge * w)
    return w


def degree_baseline_auc(stream: EventStream, config: TrainConfig | None = None, seed: int = 0) -> float:
    """Test AUC of logistic regression on log-degrees (counted over the
    training split) of the two endpoints, with uniform negative destinations."""
    from .graph import chronological_split

    config = config or TrainConfig()
    split = chronological_split(stream, config.split_config(), config.mode)
    n = stream.num_nodes()
    deg = np.bincount(np.concatenate([split.train.src, split.train.dst]), minlength=n).astype(float)
    nodes = stream.nodes()
    rng = np.random.default_rng(seed)

    def features(part):
        neg = sample_negatives(part.dst, nodes, 1, rng)[:, 0]
        pos = np.column_stack([np.log1p(deg[part.src]), np.log1p(deg[part.dst])])
        negf = np.column_stack([np.log1p(deg[part.src]), np.log1p(deg[neg])])
        return pos, negf

    pos, neg = features(split.train)
    w = _logistic_fit(np.vstack([pos, neg]), np.concatenate([np.ones(len(pos)), np.zeros(len(neg))]))
    tp, tn = features(split.test)
    score = lambda F: np.column_stack([np.ones(len(F)), F]) @ w
    return auc(score(tp), score(tn))


def run_ablation(stream: EventStream, base: TrainConfig, seeds, variants: dict | None = None) -> list[dict]:
    rows = []
    for name, overrides in (variants or ABLATIONS).items():
        for seed in seeds:
            cfg = replace(base, seed=seed, **overrides)
            res = train(cfg, stream)
            t = res.test["transductive"]
            rows.append({"variant": name, "seed": seed, "auc": t["auc"], "ap": t["ap"], "mrr": t["mrr"],
                         "best_epoch": res.best_epoch})
            log.info("ablation %s seed %d auc %.4f", name, seed, t["auc"])
    return rows


def run_noise_sweep(stream: EventStream, base: TrainConfig, levels=DEFAULT_LEVELS, seeds=(0,),
                    variants=("fgat_n", "fgat", "gat"), sigma: float = 1.0) -> list[dict]:
    """Train and test every attention variant on copies of ``stream`` carrying
    edge and attribute noise at each level (both fractions equal the level)."""
    rows = []
    for level in levels:
        if not 0 <= level <= 1:
            raise InvalidArgumentError(f"noise level {level} outside [0, 1]")
        for seed in seeds:
            noisy = inject_noise(stream, NoiseSpec(edge=level, attr=level, sigma=sigma, seed=seed))
            for variant in variants:
                res = train(replace(base, seed=seed, attention=variant), noisy)
                t = res.test["transductive"]
                rows.append({"level": level, "variant": variant, "seed": seed, "auc": t["auc"], "ap": t["ap"]})
                log.info("noise %.2f %s seed %d auc %.4f", level, variant, seed, t["auc"])
    return rows


def mean_by(rows, keys, value="auc") -> dict:
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r[value])
    return {k: float(np.mean(v)) for k, v in groups.items()}
