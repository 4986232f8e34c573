"""Command-line interface: ``unidyg {convert,train,eval,ablate,noise-sweep,spectrum,noise}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .encoder import UniDyGModel
from .errors import InvalidArgumentError, UniDyGError
from .graph import (
    EventStream,
    dtdg_to_events,
    read_ctdg_csv,
    read_dtdg_csv,
    snapshot_slices,
    write_events_csv,
    write_json,
)
from .harness import DEFAULT_LEVELS, NoiseSpec, inject_noise, run_ablation, run_noise_sweep, spectrum_table
from .synthetic import planted_ctdg, planted_dtdg
from .training import TrainConfig, evaluate, prepare_data, train

log = logging.getLogger("unidyg")

# flag name -> TrainConfig field
FLAG_FIELDS = {
    "mode": "mode", "attention": "attention", "dynamics": "dynamics", "theta": "theta",
    "neighbors": "neighbors", "batch": "batch_size", "lr": "lr", "seed": "seed", "window": "window",
    "epochs": "epochs", "patience": "patience", "dim": "dim", "time_dim": "time_dim", "gate_rule": "gate_rule",
}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# Config and data loading


def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def read_config_file(path) -> dict:
    """A JSON object, or flat ``key = value`` lines with ``#`` comments."""
    text = Path(path).read_text()
    stripped = text.strip()
    if stripped.startswith("{"):
        data = json.loads(stripped)
        if not isinstance(data, dict):
            raise UsageError(f"{path}: JSON config must be an object")
        return data
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = _coerce(value)
    return out


def build_config(args) -> TrainConfig:
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    values = {FLAG_FIELDS.get(k, k): v for k, v in values.items()}
    for flag, name in FLAG_FIELDS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(values) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return TrainConfig(**values)


def load_stream(path, mode: str) -> EventStream:
    """Unified event CSV (``src,dst,t,...``) or raw snapshot CSV (``snapshot,src,dst,...``)."""
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), [])
    if header[:1] == ["snapshot"]:
        return dtdg_to_events(read_dtdg_csv(path))
    stream = read_ctdg_csv(path)
    if mode == "dtdg" and not np.all(stream.t == np.round(stream.t)):
        raise InvalidArgumentError("dtdg mode needs integer snapshot timestamps")
    return stream


SYNTHETIC = {"planted-ctdg": planted_ctdg, "planted-dtdg": planted_dtdg}


def dataset(args, mode: str) -> EventStream:
    if args.data:
        return load_stream(args.data, mode)
    if args.synthetic:
        return SYNTHETIC[args.synthetic](seed=args.data_seed)
    raise UsageError("one of --data or --synthetic is required")


class Output:
    """An output directory that records every file it produces in manifest.json."""

    def __init__(self, directory, command: str, seed):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.seed = seed
        self.files: list[dict] = []

    def path(self, name: str, seed=None) -> Path:
        self.files.append({"path": name, "seed": self.seed if seed is None else seed})
        return self.dir / name

    def add_tree(self, sub: str, seed=None):
        for p in sorted((self.dir / sub).rglob("*")):
            if p.is_file():
                self.files.append({"path": str(p.relative_to(self.dir)), "seed": self.seed if seed is None else seed})

    def finish(self, extra: dict | None = None):
        manifest = {"command": self.command, "seed": self.seed, "files": self.files}
        if extra:
            manifest.update(extra)
        write_json(manifest, self.dir / "manifest.json")


def write_rows(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else [], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


# --------------------------------------------------------------------------
# Commands


def cmd_convert(args) -> int:
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.mode == "dtdg":
        stream = dtdg_to_events(read_dtdg_csv(args.input))
        side = {"mode": "dtdg", "snapshots": [
            {"index": int(stream.t[s.start]), "start": s.start, "stop": s.stop} for s in snapshot_slices(stream)]}
    else:
        stream = read_ctdg_csv(args.input)
        side = {"mode": "ctdg"}
    write_events_csv(stream, out)
    side.update(events=len(stream), edge_dim=stream.d_e, nodes=int(stream.nodes().size), source=str(args.input))
    write_json(side, out.with_suffix(out.suffix + ".json"))
    print(f"wrote {len(stream)} events to {out}")
    return 0


def cmd_train(args) -> int:
    config = build_config(args)
    stream = dataset(args, config.mode)
    out = Output(args.out, "train", config.seed)

    def progress(r):
        mrr = "" if r["val_mrr"] is None else f" val_mrr {r['val_mrr']:.4f}"
        print(f"epoch {r['epoch']:3d} loss {r['loss']:.5f} val_auc {r['val_auc']:.4f} val_ap {r['val_ap']:.4f}{mrr}")

    result = train(config, stream, out_dir=out.dir, progress=progress)
    for name in ("metrics.jsonl", "negatives.npz", "split.json", "summary.json"):
        out.path(name)
    out.add_tree("checkpoint")
    write_json(config.to_dict(), out.path("config.json"))
    out.finish({"config": config.to_dict()})
    print(json.dumps(result.test["transductive"]))
    return 0


def cmd_eval(args) -> int:
    ck = Path(args.checkpoint)
    if (ck / "checkpoint").is_dir():
        ck = ck / "checkpoint"
    meta = json.loads((ck / "model.json").read_text())
    config = TrainConfig.from_dict(meta["train_config"])
    stream = dataset(args, config.mode)
    model = UniDyGModel.load(ck)
    metrics = evaluate(model, prepare_data(stream, config), config)
    out = Output(args.out, "eval", config.seed)
    write_json(json.loads(json.dumps(metrics)), out.path("metrics.json"))
    out.finish({"checkpoint": str(ck)})
    print(json.dumps(metrics["transductive"]))
    return 0


def _seeds(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s.strip()]


def _levels(text: str) -> list[float]:
    return [float(s) for s in text.split(",") if s.strip()]


def cmd_ablate(args) -> int:
    config = build_config(args)
    stream = dataset(args, config.mode)
    rows = run_ablation(stream, config, _seeds(args.seeds))
    out = Output(args.out, "ablate", _seeds(args.seeds))
    write_rows(rows, out.path("ablation.csv"))
    out.finish({"config": config.to_dict()})
    return 0


def cmd_noise_sweep(args) -> int:
    config = build_config(args)
    stream = dataset(args, config.mode)
    seeds = _seeds(args.seeds)
    rows = run_noise_sweep(stream, config, _levels(args.levels), seeds, tuple(args.variants.split(",")),
                           sigma=args.sigma)
    out = Output(args.out, "noise-sweep", seeds)
    write_rows(rows, out.path("noise_sweep.csv"))
    out.finish({"config": config.to_dict(), "sigma": args.sigma})
    return 0


def cmd_spectrum(args) -> int:
    stream = load_stream(args.data, "ctdg")
    table = spectrum_table(stream, args.window, args.feature)
    out = Output(args.out, "spectrum", None)
    with out.path("spectrum.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["f", "amp_feature", "amp_interarrival"])
        for f, a, b in table:
            w.writerow([int(f), repr(float(a)), repr(float(b))])
    out.finish({"window": args.window, "feature": args.feature})
    return 0


def cmd_noise(args) -> int:
    stream = load_stream(args.data, "ctdg")
    noisy = inject_noise(stream, NoiseSpec(args.edge, args.attr, args.sigma, args.seed))
    out = Output(args.out, "noise", args.seed)
    write_events_csv(noisy, out.path("events.csv"))
    out.finish({"edge": args.edge, "attr": args.attr, "sigma": args.sigma})
    return 0


# --------------------------------------------------------------------------
# Parser


def _train_flags(p, data_required=True):
    p.add_argument("--config", help="JSON or key=value config file; flags override it")
    src = p.add_argument_group("data")
    src.add_argument("--data", help="event CSV (src,dst,t,...) or snapshot CSV (snapshot,src,dst,...)")
    src.add_argument("--synthetic", choices=sorted(SYNTHETIC), help="use a built-in synthetic graph")
    src.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--mode", choices=["ctdg", "dtdg"])
    p.add_argument("--attention", choices=["fgat_n", "fgat", "gat"])
    p.add_argument("--dynamics", choices=["frequency", "time-linear"])
    p.add_argument("--gate-rule", dest="gate_rule", choices=["energy", "paper-literal"])
    p.add_argument("--theta", type=float)
    p.add_argument("--neighbors", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--window", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--time-dim", dest="time_dim", type=int)
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unidyg", description="Frequency-domain dynamic graph learning")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert a ctdg or dtdg CSV into the unified event CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--mode", choices=["ctdg", "dtdg"], required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("train", help="train and test a model")
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved checkpoint")
    p.add_argument("--checkpoint", required=True, help="training output directory or its checkpoint/")
    p.add_argument("--data")
    p.add_argument("--synthetic", choices=sorted(SYNTHETIC))
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="full model against its ablations")
    _train_flags(p)
    p.add_argument("--seeds", default="0")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("noise-sweep", help="test AUC against injected noise level")
    _train_flags(p)
    p.add_argument("--seeds", default="0")
    p.add_argument("--levels", default=",".join(str(x) for x in DEFAULT_LEVELS))
    p.add_argument("--variants", default="fgat_n,fgat,gat")
    p.add_argument("--sigma", type=float, default=1.0)
    p.set_defaults(func=cmd_noise_sweep)

    p = sub.add_parser("spectrum", help="amplitude spectra of an edge feature and of inter-arrival times")
    p.add_argument("--data", required=True)
    p.add_argument("--window", type=int, default=400)
    p.add_argument("--feature", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("noise", help="write a noisy copy of an event CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--edge", type=float, default=0.0)
    p.add_argument("--attr", type=float, default=0.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_noise)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"unidyg: error: {exc}", file=sys.stderr)
        return 2
    except (UniDyGError, OSError, ValueError, KeyError) as exc:
        print(f"unidyg: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
