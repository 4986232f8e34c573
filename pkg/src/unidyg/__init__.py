"""Dynamic graph representation learning in the frequency domain, for
continuous-time event streams and discrete-time snapshot graphs alike."""

from .encoder import LinkDecoder, ModelConfig, UniDyGModel
from .encodings import TimeEncoder, encode_time
from .graph import EventStream, SnapshotGraph, TemporalNeighborStore, chronological_split, dtdg_to_events
from .metrics import ap, auc, mrr
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "EventStream",
    "LinkDecoder",
    "ModelConfig",
    "SnapshotGraph",
    "TemporalNeighborStore",
    "TimeEncoder",
    "TrainConfig",
    "UniDyGModel",
    "ap",
    "auc",
    "chronological_split",
    "dtdg_to_events",
    "encode_time",
    "evaluate",
    "mrr",
    "train",
]
