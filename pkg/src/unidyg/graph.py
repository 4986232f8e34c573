"""Event streams, snapshot conversion, chronological splits and the temporal
neighbor store.

Both graph types share one representation: a columnar stream of events
``(src, dst, t, features)`` sorted by time. A discrete-time graph becomes a
stream whose timestamps are snapshot indices.
"""
from __future__ import annotations

import bisect
import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgumentError, InvalidInputError, LeakageError, TemporalOrderError

log = logging.getLogger(__name__)

MODES = ("ctdg", "dtdg")


def check_mode(mode: str) -> str:
    if mode not in MODES:
        raise InvalidArgumentError(f"mode must be one of {MODES}, got {mode!r}")
    return mode


@dataclass(frozen=True)
class Event:
    src: int
    dst: int
    t: float
    edge_features: np.ndarray = field(default_factory=lambda: np.zeros(0))


class EventStream:
    """Columnar event storage: ``src``, ``dst`` (int64), ``t`` (float64) and
    ``feats`` of shape ``(E, d_e)``."""

    def __init__(self, src, dst, t, feats=None, *, check_sorted: bool = True):
        self.src = np.asarray(src, dtype=np.int64).reshape(-1)
        self.dst = np.asarray(dst, dtype=np.int64).reshape(-1)
        self.t = np.asarray(t, dtype=np.float64).reshape(-1)
        n = self.src.shape[0]
        if feats is None:
            feats = np.zeros((n, 0))
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 2:
            feats = feats.reshape(n, -1) if n else np.zeros((0, 0))
        self.feats = feats
        if not (self.dst.shape[0] == n == self.t.shape[0] == self.feats.shape[0]):
            raise InvalidInputError("src, dst, t and feats must have equal length")
        if n and (np.any(self.src < 0) or np.any(self.dst < 0)):
            raise InvalidInputError("node ids must be non-negative")
        if n and not np.all(np.isfinite(self.t)):
            raise InvalidInputError("timestamps must be finite")
        if n and np.any(self.t < 0):
            raise InvalidInputError("timestamps must be non-negative")
        if check_sorted and not self.is_sorted():
            raise TemporalOrderError("event stream is not sorted by time")

    @classmethod
    def empty(cls, d_e: int = 0) -> "EventStream":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros((0, d_e)))

    @classmethod
    def from_events(cls, events: Iterable[Event], d_e: int | None = None) -> "EventStream":
        events = list(events)
        if not events:
            return cls.empty(d_e or 0)
        feats = np.stack([np.asarray(e.edge_features, dtype=np.float64).reshape(-1) for e in events])
        return cls([e.src for e in events], [e.dst for e in events], [e.t for e in events], feats)

    def __len__(self):
        return int(self.src.shape[0])

    def __iter__(self):
        for i in range(len(self)):
            yield Event(int(self.src[i]), int(self.dst[i]), float(self.t[i]), self.feats[i].copy())

    def __getitem__(self, index) -> "EventStream":
        if isinstance(index, (int, np.integer)):
            index = slice(int(index), int(index) + 1)
        return EventStream(self.src[index], self.dst[index], self.t[index], self.feats[index], check_sorted=False)

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            np.array_equal(self.src, other.src)
            and np.array_equal(self.dst, other.dst)
            and np.array_equal(self.t, other.t)
            and self.feats.shape == other.feats.shape
            and np.array_equal(self.feats, other.feats)
        )

    def __repr__(self):
        return f"EventStream(events={len(self)}, d_e={self.d_e})"

    @property
    def d_e(self) -> int:
        return int(self.feats.shape[1])

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.t) >= 0))

    def sorted(self) -> "EventStream":
        order = np.argsort(self.t, kind="stable")
        return EventStream(self.src[order], self.dst[order], self.t[order], self.feats[order])

    def copy(self) -> "EventStream":
        return EventStream(self.src.copy(), self.dst.copy(), self.t.copy(), self.feats.copy(), check_sorted=False)

    def nodes(self) -> np.ndarray:
        return np.unique(np.concatenate([self.src, self.dst]))

    def num_nodes(self) -> int:
        return int(max(self.src.max(initial=-1), self.dst.max(initial=-1)) + 1)

    @staticmethod
    def concat(streams: Sequence["EventStream"]) -> "EventStream":
        streams = list(streams)
        if not streams:
            return EventStream.empty()
        return EventStream(
            np.concatenate([s.src for s in streams]),
            np.concatenate([s.dst for s in streams]),
            np.concatenate([s.t for s in streams]),
            np.concatenate([s.feats for s in streams]),
            check_sorted=False,
        )


@dataclass
class SnapshotGraph:
    index: int
    edges: list  # (src, dst, features) triples

    def __len__(self):
        return len(self.edges)


def dtdg_to_events(snapshots: Sequence[SnapshotGraph], d_e: int | None = None) -> EventStream:
    """Flatten snapshots into one stream stamped with the snapshot index."""
    src, dst, t, feats = [], [], [], []
    prev = None
    for snap in snapshots:
        if prev is not None and snap.index <= prev:
            if snap.index == prev:
                raise InvalidInputError(f"duplicate snapshot index {snap.index}")
            raise InvalidInputError(f"snapshot indices must increase, got {snap.index} after {prev}")
        if snap.index < 0:
            raise InvalidInputError(f"snapshot index must be non-negative, got {snap.index}")
        prev = snap.index
        for s, d, f in snap.edges:
            src.append(s)
            dst.append(d)
            t.append(float(snap.index))
            feats.append(np.asarray(f, dtype=np.float64).reshape(-1))
    if not src:
        return EventStream.empty(d_e or 0)
    widths = {f.shape[0] for f in feats}
    if len(widths) != 1:
        raise InvalidInputError(f"edge features have inconsistent widths {sorted(widths)}")
    return EventStream(src, dst, t, np.stack(feats))


def events_to_snapshots(stream: EventStream) -> list[SnapshotGraph]:
    """Group a stream by timestamp, keeping within-snapshot order."""
    out = []
    if not len(stream):
        return out
    times, starts = np.unique(stream.t, return_index=True)
    bounds = list(starts) + [len(stream)]
    for i, tv in enumerate(times):
        if tv != int(tv):
            raise InvalidInputError(f"timestamp {tv} is not a snapshot index")
        rows = range(bounds[i], bounds[i + 1])
        out.append(SnapshotGraph(int(tv), [(int(stream.src[r]), int(stream.dst[r]), stream.feats[r].copy()) for r in rows]))
    return out


def snapshot_slices(stream: EventStream) -> list[slice]:
    """Contiguous row ranges sharing one timestamp."""
    if not len(stream):
        return []
    cut = np.flatnonzero(np.diff(stream.t)) + 1
    bounds = [0, *cut.tolist(), len(stream)]
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


# --------------------------------------------------------------------------
# Splits


@dataclass
class SplitConfig:
    train: float = 0.70
    val: float = 0.15
    test: float = 0.15
    inductive: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if min(self.train, self.val, self.test) <= 0:
            raise InvalidArgumentError("split fractions must be positive")
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise InvalidArgumentError("split fractions must sum to 1")
        if not 0 <= self.inductive < 1:
            raise InvalidArgumentError("inductive fraction must lie in [0, 1)")


@dataclass
class Split:
    train: EventStream
    val: EventStream
    test: EventStream
    k1: int
    k2: int

    @property
    def t1(self) -> float:
        return float(self.train.t[-1])

    @property
    def t2(self) -> float:
        return float(self.val.t[-1])


def _nearest_index(cum_frac: np.ndarray, target: float) -> int:
    # argmin returns the first minimiser, so ties go to the earlier snapshot
    return int(np.argmin(np.abs(cum_frac - target)))


def split_boundaries(t: np.ndarray, config: SplitConfig, mode: str) -> tuple[int, int]:
    """Row indices k1 < k2 so that train = [:k1], val = [k1:k2], test = [k2:]."""
    check_mode(mode)
    t = np.asarray(t, dtype=np.float64)
    times, counts = np.unique(t, return_counts=True)
    if times.size < 3:
        raise InvalidInputError(f"need at least 3 distinct timestamps to split, got {times.size}")
    n = t.size
    if mode == "ctdg":
        def boundary(frac):
            k = int(np.floor(frac * n))
            k = min(max(k, 1), n)
            if k < n and t[k] == t[k - 1]:
                k = int(np.searchsorted(t, t[k], side="right"))
            return k

        k1 = boundary(config.train)
        k2 = boundary(config.train + config.val)
    else:
        cum = np.cumsum(counts)
        frac = cum / n
        s = times.size
        i1 = min(_nearest_index(frac, config.train), s - 3)
        i2 = _nearest_index(frac, config.train + config.val)
        i2 = min(max(i2, i1 + 1), s - 2)
        k1, k2 = int(cum[i1]), int(cum[i2])
    if not 0 < k1 < k2 < n:
        raise InvalidInputError(f"split produced an empty partition (k1={k1}, k2={k2}, n={n})")
    return k1, k2


def chronological_split(stream: EventStream, config: SplitConfig | None = None, mode: str = "ctdg") -> Split:
    config = config or SplitConfig()
    if not stream.is_sorted():
        raise TemporalOrderError("stream must be sorted before splitting")
    k1, k2 = split_boundaries(stream.t, config, mode)
    return Split(stream[:k1], stream[k1:k2], stream[k2:], k1, k2)


def mask_inductive_nodes(stream: EventStream, fraction: float, seed: int, nodes=None):
    """Hold out floor(fraction * |nodes|) uniformly chosen nodes and drop every
    event of ``stream`` touching them. ``nodes`` defaults to the stream's own
    node set; pass the full dataset's node set when masking a training split."""
    if not 0 < fraction < 1:
        raise InvalidArgumentError(f"inductive fraction must lie in (0, 1), got {fraction}")
    universe = np.unique(np.asarray(stream.nodes() if nodes is None else nodes, dtype=np.int64))
    count = int(np.floor(fraction * universe.size))
    rng = np.random.default_rng(seed)
    held = np.sort(rng.choice(universe, size=count, replace=False)) if count else np.zeros(0, dtype=np.int64)
    touch = np.isin(stream.src, held) | np.isin(stream.dst, held)
    return stream[~touch], held


# --------------------------------------------------------------------------
# Mini-batches


def batch_slices(n: int, batch_size: int) -> list[slice]:
    if batch_size < 1:
        raise InvalidArgumentError(f"batch size must be >= 1, got {batch_size}")
    return [slice(a, min(a + batch_size, n)) for a in range(0, n, batch_size)]


def make_minibatches(stream: EventStream, batch_size: int) -> list[EventStream]:
    """Consecutive batches of exactly ``batch_size`` events plus one shorter,
    unpadded final batch when the count does not divide evenly."""
    return [stream[s] for s in batch_slices(len(stream), batch_size)]


def training_batches(stream: EventStream, batch_size: int, mode: str) -> list[list[slice]]:
    """Group batches into flush units.

    In CTDG mode each batch is its own unit. In DTDG mode batches never cross a
    snapshot boundary and all batches of one snapshot form a unit, so states
    are updated once the whole snapshot has been consumed.
    """
    check_mode(mode)
    if mode == "ctdg":
        return [[s] for s in batch_slices(len(stream), batch_size)]
    units = []
    for snap in snapshot_slices(stream):
        inner = batch_slices(snap.stop - snap.start, batch_size)
        units.append([slice(snap.start + s.start, snap.start + s.stop) for s in inner])
    return units


# --------------------------------------------------------------------------
# Temporal neighbor store


@dataclass
class NeighborBatch:
    ids: np.ndarray  # (..., N) int64, -1 in empty slots
    times: np.ndarray  # (..., N)
    feats: np.ndarray  # (..., N, d_e)
    mask: np.ndarray  # (..., N) bool

    def __len__(self):
        return self.ids.shape[0]


class TemporalNeighborStore:
    """Per-node append-only interaction logs.

    Every event is logged for both endpoints. A query for ``(node, t)`` returns
    the ``N`` most recent interactions strictly before ``t``, newest first;
    among equal timestamps the later-ingested record comes first. With
    ``window`` set, only interactions at times ``>= t - window`` qualify.
    """

    def __init__(self, d_e: int = 0, window: float | None = None):
        if window is not None and window <= 0:
            raise InvalidArgumentError(f"window must be positive, got {window}")
        self.d_e = int(d_e)
        self.window = window
        self._times: dict[int, list[float]] = {}
        self._nbrs: dict[int, list[int]] = {}
        self._rows: dict[int, list[int]] = {}
        self._feats = np.zeros((1024, self.d_e))
        self._count = 0
        self.last_time = -np.inf

    def reset(self):
        self.__init__(self.d_e, self.window)

    def __len__(self):
        return self._count

    def _append_feats(self, feats):
        need = self._count + feats.shape[0]
        if need > self._feats.shape[0]:
            grown = np.zeros((max(need, 2 * self._feats.shape[0]), self.d_e))
            grown[: self._count] = self._feats[: self._count]
            self._feats = grown
        self._feats[self._count:need] = feats
        first = self._count
        self._count = need
        return first

    def ingest(self, events: EventStream):
        if not len(events):
            return
        if events.d_e != self.d_e:
            raise InvalidInputError(f"edge feature width {events.d_e} != store width {self.d_e}")
        if events.t[0] < self.last_time or not events.is_sorted():
            raise TemporalOrderError(
                f"ingest out of time order: batch starts at {events.t[0]} after {self.last_time}")
        first = self._append_feats(events.feats)
        for i, (s, d, tv) in enumerate(zip(events.src.tolist(), events.dst.tolist(), events.t.tolist())):
            row = first + i
            for a, b in ((s, d), (d, s)):
                times = self._times.get(a)
                if times is None:
                    self._times[a] = [tv]
                    self._nbrs[a] = [b]
                    self._rows[a] = [row]
                else:
                    times.append(tv)
                    self._nbrs[a].append(b)
                    self._rows[a].append(row)
        self.last_time = float(events.t[-1])

    def degree(self, node: int) -> int:
        return len(self._times.get(int(node), ()))

    def sample(self, nodes, times, n_neighbors: int) -> NeighborBatch:
        nodes = np.asarray(nodes, dtype=np.int64).reshape(-1)
        times = np.asarray(times, dtype=np.float64).reshape(-1)
        B = nodes.shape[0]
        ids = np.full((B, n_neighbors), -1, dtype=np.int64)
        tt = np.zeros((B, n_neighbors))
        rows = np.full((B, n_neighbors), -1, dtype=np.int64)
        for b, (node, tq) in enumerate(zip(nodes.tolist(), times.tolist())):
            log_t = self._times.get(node)
            if not log_t:
                continue
            hi = bisect.bisect_left(log_t, tq)
            lo = max(0, hi - n_neighbors)
            if self.window is not None:
                lo = max(lo, bisect.bisect_left(log_t, tq - self.window))
            k = hi - lo
            if k <= 0:
                continue
            ids[b, :k] = self._nbrs[node][lo:hi][::-1]
            tt[b, :k] = log_t[lo:hi][::-1]
            rows[b, :k] = self._rows[node][lo:hi][::-1]
        mask = ids >= 0
        feats = np.zeros((B, n_neighbors, self.d_e))
        if self.d_e:
            feats[mask] = self._feats[rows[mask]]
        return NeighborBatch(ids, tt, feats, mask)


def sample_recent_neighbors(node: int, t: float, n_neighbors: int, store: TemporalNeighborStore) -> NeighborBatch:
    nb = store.sample([node], [t], n_neighbors)
    return NeighborBatch(nb.ids[0], nb.times[0], nb.feats[0], nb.mask[0])


class LeakageAudit:
    """Wraps a neighbor store and checks every sample it serves.

    A valid neighbor timestamp that is not strictly earlier than its query
    time raises :class:`LeakageError`.
    """

    def __init__(self, store: TemporalNeighborStore):
        self.store = store
        self.queries = 0
        self.neighbors = 0

    def __getattr__(self, name):
        return getattr(self.store, name)

    def __len__(self):
        return len(self.store)

    def sample(self, nodes, times, n_neighbors: int) -> NeighborBatch:
        nb = self.store.sample(nodes, times, n_neighbors)
        times = np.asarray(times, dtype=np.float64).reshape(-1, 1)
        bad = nb.mask & (nb.times >= times)
        self.queries += nb.ids.shape[0]
        self.neighbors += int(nb.mask.sum())
        if bad.any():
            b = int(np.argwhere(bad)[0, 0])
            raise LeakageError(
                f"node {int(np.asarray(nodes).reshape(-1)[b])} queried at t={float(times[b, 0])} "
                f"received a neighbor at t={float(nb.times[bad][0])}")
        return nb


# --------------------------------------------------------------------------
# CSV and sidecar IO


def _parse_row(row, line, n_fixed):
    if len(row) < n_fixed:
        raise InvalidInputError(f"expected at least {n_fixed} columns, got {len(row)}", line)
    try:
        values = [float(x) for x in row]
    except ValueError as exc:
        raise InvalidInputError(f"non-numeric field ({exc})", line) from None
    return values


def _node_id(value, line):
    if value != int(value) or value < 0:
        raise InvalidInputError(f"node id {value} is not a non-negative integer", line)
    return int(value)


def read_ctdg_csv(path) -> EventStream:
    """Read ``src,dst,t[,feat_0,...]``. Unsorted input is sorted (stably) with a warning."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["src", "dst", "t"]:
            raise InvalidInputError("header must start with src,dst,t", 1)
        width = len(header)
        src, dst, t, feats = [], [], [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise InvalidInputError(f"expected {width} columns, got {len(row)}", line)
            v = _parse_row(row, line, 3)
            src.append(_node_id(v[0], line))
            dst.append(_node_id(v[1], line))
            if not np.isfinite(v[2]) or v[2] < 0:
                raise InvalidInputError(f"invalid timestamp {row[2]}", line)
            t.append(v[2])
            feats.append(v[3:])
    stream = EventStream(src, dst, t, np.asarray(feats, dtype=np.float64).reshape(len(src), width - 3), check_sorted=False)
    if not stream.is_sorted():
        log.warning("%s: events are not in time order; sorting", path)
        stream = stream.sorted()
    return stream


def read_dtdg_csv(path) -> list[SnapshotGraph]:
    """Read ``snapshot,src,dst[,feat_0,...]`` into snapshots ordered by index."""
    path = Path(path)
    groups: dict[int, list] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["snapshot", "src", "dst"]:
            raise InvalidInputError("header must start with snapshot,src,dst", 1)
        width = len(header)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise InvalidInputError(f"expected {width} columns, got {len(row)}", line)
            v = _parse_row(row, line, 3)
            if v[0] != int(v[0]) or v[0] < 0:
                raise InvalidInputError(f"snapshot index {row[0]} is not a non-negative integer", line)
            groups.setdefault(int(v[0]), []).append((_node_id(v[1], line), _node_id(v[2], line), np.asarray(v[3:])))
    return [SnapshotGraph(k, groups[k]) for k in sorted(groups)]


def _fmt(x: float) -> str:
    return repr(float(x))


def write_events_csv(stream: EventStream, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst", "t"] + [f"feat_{i}" for i in range(stream.d_e)])
        for i in range(len(stream)):
            w.writerow([int(stream.src[i]), int(stream.dst[i]), _fmt(stream.t[i])] + [_fmt(x) for x in stream.feats[i]])


def write_snapshots_csv(snapshots: Sequence[SnapshotGraph], path) -> None:
    d_e = 0
    for s in snapshots:
        if s.edges:
            d_e = len(np.asarray(s.edges[0][2]).reshape(-1))
            break
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["snapshot", "src", "dst"] + [f"feat_{i}" for i in range(d_e)])
        for s in snapshots:
            for a, b, f in s.edges:
                w.writerow([s.index, a, b] + [_fmt(x) for x in np.asarray(f).reshape(-1)])


def write_json(data: dict, path) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())
