"""Synthetic dynamic graphs with known structure.

The planted graphs pair nodes inside two communities; every pair interacts on
its own fixed period (one period per community) with a random phase. All nodes
have the same expected degree, so degree carries no signal, while the timing
of a node's last interaction says whether it is due to interact again. Edge
features carry a community sign on slowly varying carriers plus Gaussian
noise.
"""
from __future__ import annotations

import numpy as np

from .graph import EventStream


def _features(community_sign, t, d_e, horizon, noise, rng):
    if d_e == 0:
        return np.zeros((t.size, 0))
    k = np.arange(d_e)
    carrier = 1.0 + 0.5 * np.cos(2 * np.pi * (t[:, None] / horizon) * (1 + k) / 2 + k)
    return community_sign[:, None] * carrier + noise * rng.standard_normal((t.size, d_e))


def planted_ctdg(n_pairs: int = 100, periods=(9.0, 11.0), target_events: int = 5000, jitter: float = 0.2,
                 d_e: int = 4, feature_noise: float = 0.3, seed: int = 0) -> EventStream:
    rng = np.random.default_rng(seed)
    community = (np.arange(n_pairs) >= n_pairs // 2).astype(int)
    period = np.asarray(periods, dtype=np.float64)[community]
    horizon = target_events / np.sum(1.0 / period)
    src, dst, t, sign = [], [], [], []
    for p in range(n_pairs):
        phase = rng.uniform(0, period[p])
        k = np.arange(int(np.ceil((horizon - phase) / period[p])) + 1)
        times = phase + k * period[p] + jitter * rng.standard_normal(k.size)
        times = times[(times >= 0) & (times < horizon)]
        a, b = 2 * p, 2 * p + 1
        flip = rng.random(times.size) < 0.5
        src.append(np.where(flip, b, a))
        dst.append(np.where(flip, a, b))
        t.append(times)
        sign.append(np.full(times.size, 1.0 if community[p] == 0 else -1.0))
    src, dst, t, sign = (np.concatenate(x) for x in (src, dst, t, sign))
    order = np.argsort(t, kind="stable")
    src, dst, t, sign = src[order], dst[order], t[order], sign[order]
    feats = _features(sign, t, d_e, horizon, feature_noise, rng)
    return EventStream(src, dst, t, feats)


def planted_dtdg(n_pairs: int = 400, periods=(3, 4), snapshots: int = 40, skip_prob: float = 0.0,
                 d_e: int = 4, feature_noise: float = 0.3, seed: int = 0) -> EventStream:
    """Snapshot version: pair p appears in every ``period``-th snapshot from its phase."""
    rng = np.random.default_rng(seed)
    community = (np.arange(n_pairs) >= n_pairs // 2).astype(int)
    period = np.asarray(periods, dtype=np.int64)[community]
    src, dst, t, sign = [], [], [], []
    for p in range(n_pairs):
        phase = rng.integers(0, period[p])
        times = np.arange(phase, snapshots, period[p])
        times = times[rng.random(times.size) >= skip_prob]
        a, b = 2 * p, 2 * p + 1
        flip = rng.random(times.size) < 0.5
        src.append(np.where(flip, b, a))
        dst.append(np.where(flip, a, b))
        t.append(times.astype(np.float64))
        sign.append(np.full(times.size, 1.0 if community[p] == 0 else -1.0))
    src, dst, t, sign = (np.concatenate(x) for x in (src, dst, t, sign))
    order = np.lexsort((rng.random(t.size), t))
    src, dst, t, sign = src[order], dst[order], t[order], sign[order]
    feats = _features(sign, t, d_e, float(snapshots), feature_noise, rng)
    return EventStream(src, dst, t, feats)


def random_dtdg(num_nodes: int = 1899, num_edges: int = 59835, snapshots: int = 28, d_e: int = 0,
                seed: int = 0) -> EventStream:
    """Unstructured snapshot graph with heavy-tailed node activity, for sizing runs."""
    rng = np.random.default_rng(seed)
    activity = rng.pareto(1.5, num_nodes) + 1.0
    prob = activity / activity.sum()
    src = rng.choice(num_nodes, size=num_edges, p=prob)
    dst = rng.choice(num_nodes - 1, size=num_edges, p=None)
    dst = dst + (dst >= src)
    weights = rng.uniform(0.5, 1.5, snapshots)
    t = np.sort(rng.choice(snapshots, size=num_edges, p=weights / weights.sum())).astype(np.float64)
    return EventStream(src, dst, t, rng.standard_normal((num_edges, d_e)))
