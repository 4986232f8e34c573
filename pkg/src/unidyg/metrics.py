"""Ranking metrics for link prediction."""
from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError


def _scores(x, name):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise InvalidArgumentError(f"{name} scores must be non-empty")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError(f"{name} scores must be finite")
    return x


def auc(pos, neg) -> float:
    """Probability that a random positive outscores a random negative, ties counting half."""
    pos = _scores(pos, "positive")
    neg = np.sort(_scores(neg, "negative"))
    below = np.searchsorted(neg, pos, side="left")
    at_or_below = np.searchsorted(neg, pos, side="right")
    wins = below.sum() + 0.5 * (at_or_below - below).sum()
    return float(wins / (pos.size * neg.size))


def ap(pos, neg) -> float:
    """Average precision over the descending ranking; at equal scores
    negatives are ranked ahead of positives."""
    pos = _scores(pos, "positive")
    neg = _scores(neg, "negative")
    scores = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(pos.size), np.zeros(neg.size)])
    order = np.lexsort((labels, -scores))
    hits = labels[order]
    precision = np.cumsum(hits) / np.arange(1, hits.size + 1)
    return float(precision[hits == 1].mean())


def reciprocal_ranks(pos, neg) -> np.ndarray:
    """1 / rank of each positive among its own row of negatives.

    ``pos`` has shape ``(P,)`` and ``neg`` shape ``(P, K)``; rank is
    1 + #(neg > pos) + 0.5 #(neg == pos).
    """
    pos = np.asarray(pos, dtype=np.float64).reshape(-1)
    neg = np.asarray(neg, dtype=np.float64)
    if neg.ndim == 1:
        neg = neg[None, :]
    if neg.shape[0] != pos.size:
        raise InvalidArgumentError(f"{pos.size} positives but {neg.shape[0]} negative rows")
    rank = 1.0 + (neg > pos[:, None]).sum(axis=1) + 0.5 * (neg == pos[:, None]).sum(axis=1)
    return 1.0 / rank


def mrr(pos, neg) -> float:
    return float(reciprocal_ranks(pos, neg).mean())
