"""Command line entry point: ``chftpp {simulate,train,evaluate,predict}``.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
The default output directory is ``$CHFTPP_OUTPUT_DIR`` (else ``./runs``).
"""
from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import hawkes as hk
from .chfnet import HorizonExceededError
from .data import Dataset, SequenceValidationError, DataFormatError, load_dataset, save_dataset, split
from .model import ChfTPP, ModelConfig
from .tensorcore import ACTIVATIONS
from .timenet import clamp, predict_time
from .training import (TrainConfig, TrainingDiverged, evaluate, load_checkpoint,
                       save_checkpoint, train)
from .typenet import type_distribution

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
OUTPUT_ENV = "CHFTPP_OUTPUT_DIR"

log = logging.getLogger("chftpp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# arguments naming files; the run identity uses their content hashes instead
PATH_ARGS = frozenset({"data", "train", "val", "checkpoint", "input", "params", "oracle", "out"})


class Manifest:
    """Run record written before work starts and finalised afterwards.

    ``run_id`` hashes the command, the non-path configuration, the input
    content hashes and the code version, so two runs over identical inputs
    share an id wherever their files live.
    """

    def __init__(self, command: str, config: dict, seed, datasets: dict[str, str], path: Path):
        self.path = path
        ident = json.dumps({"command": command,
                            "config": {k: v for k, v in config.items() if k not in PATH_ARGS},
                            "inputs": sorted(datasets.values()),
                            "version": __version__}, sort_keys=True)
        self.data = {
            "run_id": hashlib.sha256(ident.encode()).hexdigest()[:16],
            "command": command,
            "config": config,
            "seed": seed,
            "datasets": datasets,
            "code_version": __version__,
            "started_at": _now(),
            "finished_at": None,
            "status": "running",
        }
        _dump(self.data, path)

    def finish(self, status: str = "ok") -> None:
        self.data["finished_at"] = _now()
        self.data["status"] = status
        _dump(self.data, self.path)

    @property
    def ref(self) -> dict:
        return {"run_id": self.data["run_id"], "path": str(self.path)}


def _out_dir(arg: str | None, name: str) -> Path:
    base = Path(arg) if arg else Path(os.environ.get(OUTPUT_ENV, "runs")) / name
    base.mkdir(parents=True, exist_ok=True)
    return base


def _config_of(args, skip=("func", "out", "quiet")) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


# ---------------------------------------------------------------- simulate

def cmd_simulate(args) -> int:
    if args.num_sequences < 1:
        raise UsageError("--num-sequences must be >= 1")
    if (args.preset is None) == (args.params is None):
        raise UsageError("give exactly one of --preset or --params")
    if args.horizon is not None and args.mean_length is not None:
        raise UsageError("give at most one of --horizon and --mean-length")
    if args.preset is not None:
        pr = hk.preset(args.preset)
        params, horizon = pr.params, pr.horizon
    else:
        params = hk.params_from_json(args.params)
        horizon = None
    if args.horizon is not None:
        horizon = args.horizon
    mean_length = args.mean_length
    if mean_length is not None:
        horizon = None
    elif horizon is None:
        raise UsageError("--horizon or --mean-length is required with --params")
    if not params.is_stationary():
        raise UsageError(f"spectral radius of A/beta is {params.spectral_radius:.3f}; must be < 1")
    out = _out_dir(args.out, "corpus")
    inputs = {str(args.params): file_sha256(args.params)} if args.params else {}
    manifest = Manifest("simulate", _config_of(args), args.seed, inputs, out / "manifest.json")
    cfg = hk.SimConfig(args.num_sequences, horizon, args.seed, mean_length)
    ds = hk.simulate(params, cfg)
    parts = split(ds, tuple(args.split), args.seed)
    meta = hk.corpus_metadata(params, cfg, args.preset)
    meta["split"] = list(args.split)
    meta["stats"] = {"all": ds.stats()}
    for name, part in zip(("train", "val", "test"), parts):
        save_dataset(part, out / f"{name}.jsonl")
        meta["stats"][name] = part.stats()
    _dump(meta, out / "metadata.json")
    st = ds.stats()
    print(f"{'dataset':<16}{'#types':>8}{'#seqs':>8}{'avg.len':>9}  interval")
    print(f"{args.preset or Path(args.params).stem:<16}{st['num_types']:>8}{st['num_sequences']:>8}"
          f"{st['mean_length']:>9.2f}  {st['interval_mean']:.2f}({st['interval_std']:.2f})")
    manifest.finish()
    return EXIT_OK


# ------------------------------------------------------------------- train

def _resolve_split_files(args):
    if args.data:
        d = Path(args.data)
        return d / "train.jsonl", d / "val.jsonl"
    if not (args.train and args.val):
        raise UsageError("give --data DIR or both --train and --val")
    return Path(args.train), Path(args.val)


def _load(path, num_types) -> Dataset:
    if not Path(path).exists():
        raise UsageError(f"no such file: {path}")
    return load_dataset(path, num_types)


def cmd_train(args) -> int:
    train_path, val_path = _resolve_split_files(args)
    tr = _load(train_path, args.num_types)
    va = _load(val_path, args.num_types)
    if tr.num_types != va.num_types:
        raise UsageError("train and validation disagree on num_types")
    out = _out_dir(args.out, "train")
    datasets = {str(train_path): file_sha256(train_path), str(val_path): file_sha256(val_path)}
    manifest = Manifest("train", _config_of(args), args.seed, datasets, out / "manifest.json")
    mcfg = ModelConfig(tr.num_types, d=args.d, d_m=args.dm, activation=args.activation,
                       cell=args.cell, time_hidden_relu=args.time_hidden_relu)
    tcfg = TrainConfig(learning_rate=args.lr, alpha=args.alpha, batch_size=args.batch_size,
                       patience=args.patience, max_epochs=args.max_epochs, seed=args.seed)
    model = ChfTPP(mcfg, seed=args.seed)
    try:
        result = train(model, tr, va, tcfg, log_path=out / "train_log.csv")
    except TrainingDiverged as exc:
        manifest.finish("diverged")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    save_checkpoint(result.model, out / "checkpoint.json", tcfg,
                    {"best_epoch": result.best_epoch, "best_val_nll": result.best_val_nll,
                     "manifest": {"run_id": manifest.data["run_id"], "path": manifest.path.name}})
    manifest.finish()
    print(json.dumps({"best_epoch": result.best_epoch, "best_val_nll": result.best_val_nll,
                      "epochs_run": len(result.history) - 1,
                      "checkpoint": str(out / "checkpoint.json")}))
    return EXIT_OK


# ---------------------------------------------------------------- evaluate

def cmd_evaluate(args) -> int:
    model, blob = load_checkpoint(args.checkpoint)
    num_types = args.num_types if args.num_types is not None else model.config.num_types
    if num_types != model.config.num_types:
        raise UsageError(f"--num-types {num_types} does not match checkpoint ({model.config.num_types})")
    ds = _load(args.data, num_types)
    out = _out_dir(args.out, "evaluate")
    datasets = {str(args.data): file_sha256(args.data),
                str(args.checkpoint): file_sha256(args.checkpoint)}
    if args.oracle:
        datasets[str(args.oracle)] = file_sha256(args.oracle)
    manifest = Manifest("evaluate", _config_of(args), None, datasets, out / "manifest.json")
    rep = evaluate(model, ds).to_dict()
    rep["manifest"] = manifest.ref
    rep["checkpoint_manifest"] = blob.get("manifest")
    if args.oracle:
        params = hk.params_from_json(args.oracle)
        if params.num_types != num_types:
            raise UsageError("oracle parameters disagree with data on num_types")
        orc = hk.dataset_oracle_nll(params, ds)
        rep["oracle_nll_per_sequence"] = orc["nll_per_sequence"]
        rep["oracle_nll_per_event"] = orc["nll_per_event"]
    _dump(rep, out / "report.json")
    manifest.finish()
    print(json.dumps(rep, sort_keys=True))
    return EXIT_OK


# ----------------------------------------------------------------- predict

def predict_records(model: ChfTPP, ds: Dataset, top_k: int = 3, expectation: bool = False):
    """One record per prefix: predictions for the event after each observed event."""
    p = model.params.bind()
    for si, seq in enumerate(ds):
        hs = model.history(seq)[1:]  # h_1 .. h_N
        tau_raw = predict_time(p, hs, model.config.time_hidden_relu).value
        tau_hat = clamp(tau_raw)
        dist = type_distribution(p, hs, tau_hat)
        for j in range(len(seq)):
            probs = dist[j]
            order = np.argsort(-probs, kind="stable")[:top_k]
            rec = {
                "sequence": si,
                "prefix_length": j + 1,
                "last_time": float(seq.times[j]),
                "tau_hat": float(tau_hat[j]),
                "tau_exp": None,
                "type_hat": int(np.argmax(probs)),
                "type_distribution": [float(x) for x in probs],
                "top_k": [[int(k), float(probs[k])] for k in order],
            }
            if expectation:
                try:
                    rec["tau_exp"] = model.expected_time(hs[j])
                except HorizonExceededError as exc:
                    rec["tau_exp_error"] = str(exc)
            yield rec


def cmd_predict(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    ds = _load(args.input, model.config.num_types)
    sink = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for rec in predict_records(model, ds, args.top_k, args.expectation):
            sink.write(json.dumps(rec) + "\n")
    finally:
        if sink is not sys.stdout:
            sink.close()
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="chftpp", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate a Hawkes corpus with train/val/test files")
    s.add_argument("--preset", choices=hk.PRESETS)
    s.add_argument("--params", help="JSON with mu, A, beta (or a corpus metadata.json)")
    s.add_argument("--num-sequences", type=int, default=1000)
    s.add_argument("--horizon", type=float, help="observation window; overrides the preset")
    s.add_argument("--mean-length", type=float,
                   help="draw lengths 1 + Poisson(L - 1) independently of the process "
                        "instead of cutting at a horizon")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--split", type=float, nargs=3, default=(0.6, 0.2, 0.2))
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="fit a model")
    t.add_argument("--data", help="directory with train.jsonl, val.jsonl, metadata.json")
    t.add_argument("--train")
    t.add_argument("--val")
    t.add_argument("--num-types", type=int)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--alpha", type=float, default=0.01)
    t.add_argument("--batch-size", type=int, default=64)
    t.add_argument("--patience", type=int, default=10)
    t.add_argument("--max-epochs", type=int, default=200)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--d", type=int, default=64)
    t.add_argument("--dm", type=int, default=32)
    t.add_argument("--activation", choices=ACTIVATIONS, default="tanh")
    t.add_argument("--cell", choices=("vanilla", "gated"), default="vanilla")
    t.add_argument("--time-hidden-relu", action="store_true")
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="NLL, weighted F1 and MAE on a sequence file")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--num-types", type=int)
    e.add_argument("--oracle", help="Hawkes parameters (metadata.json) for the oracle NLL")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="next-event predictions for every prefix")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--top-k", type=int, default=3)
    p.add_argument("--expectation", action="store_true",
                   help="also integrate the survival function for the mean next time")
    p.add_argument("--out", help="JSON-lines file (default stdout)")
    p.set_defaults(func=cmd_predict)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, DataFormatError, SequenceValidationError, KeyError, ValueError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
