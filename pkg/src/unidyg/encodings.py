"""Fixed cosine time encoding and feature-vector helpers."""
from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError


class TimeEncoder:
    """phi(dt)_i = cos(dt * w_i) with w_i = base ** (-2 i / dim), i = 0..dim-1.

    The frequencies are fixed; nothing here is trained.
    """

    def __init__(self, dim: int = 100, base: float = 10.0):
        if dim < 1:
            raise InvalidArgumentError(f"time encoding dimension must be positive, got {dim}")
        if base <= 1.0:
            raise InvalidArgumentError(f"frequency base must exceed 1, got {base}")
        self.dim = int(dim)
        self.base = float(base)
        self.omega = self.base ** (-2.0 * np.arange(self.dim) / self.dim)

    def __repr__(self):
        return f"TimeEncoder(dim={self.dim}, base={self.base})"

    def encode(self, dt) -> np.ndarray:
        """Encode one delta or an array of deltas; output gains a trailing axis."""
        dt = np.asarray(dt, dtype=np.float64)
        if not np.all(np.isfinite(dt)):
            raise InvalidArgumentError("time delta must be finite")
        if np.any(dt < 0):
            raise InvalidArgumentError("time delta must be non-negative (neighbors precede the query)")
        return np.cos(dt[..., None] * self.omega)

    __call__ = encode

    def config(self) -> dict:
        return {"dim": self.dim, "base": self.base}


def encode_time(dt, encoder: TimeEncoder | None = None) -> np.ndarray:
    return (encoder or TimeEncoder()).encode(dt)


def pad_or_truncate(x, n: int) -> np.ndarray:
    """Zero-pad or cut the last axis of ``x`` to length n."""
    x = np.asarray(x, dtype=np.float64)
    k = x.shape[-1]
    if k >= n:
        return x[..., :n].copy()
    out = np.zeros(x.shape[:-1] + (n,))
    out[..., :k] = x
    return out


def concat_features(*parts) -> np.ndarray:
    """Concatenate feature blocks along the last axis, broadcasting leading axes."""
    arrays = [np.asarray(p, dtype=np.float64) for p in parts]
    lead = np.broadcast_shapes(*(a.shape[:-1] for a in arrays))
    return np.concatenate([np.broadcast_to(a, lead + a.shape[-1:]) for a in arrays], axis=-1)
