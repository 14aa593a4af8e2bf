"""Maximum-likelihood training, evaluation metrics and checkpoints."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.metrics import f1_score

from . import tensorcore as tc
from .data import Dataset, EventSequence, make_batches
from .model import ChfTPP
from .timenet import clamp
from .typenet import argmax_type, type_log_probs

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "chftpp-checkpoint"
CHECKPOINT_VERSION = 1
LOG_COLUMNS = ("epoch", "train_loss", "val_nll", "val_f1", "val_mae", "elapsed_seconds")


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, batch: int, loss: float, param_norms: dict[str, float]):
        self.epoch, self.batch, self.loss, self.param_norms = epoch, batch, loss, param_norms
        worst = sorted(param_norms.items(), key=lambda kv: -kv[1])[:5]
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}; "
                         f"largest parameter norms {worst}")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    alpha: float = 0.01
    batch_size: int = 64
    patience: int = 10
    max_epochs: int = 200
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    eval_batch_size: int = 256

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.alpha >= 0 and self.epsilon > 0):
            raise ValueError("learning_rate and epsilon must be positive, alpha nonnegative")
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 0:
            raise ValueError("batch_size and patience must be >= 1, max_epochs >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[k] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class EvalReport:
    nll_per_sequence: float
    nll_per_event: float
    weighted_f1: float
    time_mae: float
    event_count: int
    sequence_count: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: ChfTPP
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_nll: float = math.inf


def sequence_nll(model: ChfTPP, seq: EventSequence) -> float:
    return model.sequence_nll(seq)


def _predictions(model: ChfTPP, out):
    """Clamped time-head predictions and the type argmax at those times."""
    tau_hat = clamp(out.tau_bar)
    p = model.params.bind()
    logp = type_log_probs(p, tc.const(out.hist.value), tau_hat)
    return tau_hat, argmax_type(logp.value)


def evaluate(model: ChfTPP, ds: Dataset, batch_size: int = 256) -> EvalReport:
    """NLL, weighted F1 of next-type prediction, and MAE of next-time prediction."""
    total = 0.0
    y_true, y_pred, abs_err = [], [], []
    for batch in make_batches(ds, batch_size, shuffle=False):
        out = model.forward(batch)
        real = out.mask > 0
        total += float(np.sum(out.nll.value[real]))
        tau_hat, type_hat = _predictions(model, out)
        y_true.append(out.types[real])
        y_pred.append(type_hat[real])
        abs_err.append(np.abs(out.taus[real] - tau_hat[real]))
    y_true = np.concatenate(y_true)
    y_pred = np.concatenate(y_pred)
    n_events = int(y_true.size)
    return EvalReport(
        nll_per_sequence=total / len(ds),
        nll_per_event=total / n_events,
        weighted_f1=weighted_f1(y_true, y_pred),
        time_mae=float(np.mean(np.concatenate(abs_err))),
        event_count=n_events,
        sequence_count=len(ds),
    )


def weighted_f1(y_true, y_pred) -> float:
    return float(f1_score(y_true, y_pred, average="weighted", zero_division=0))


def train_step(model: ChfTPP, batch, alpha: float, opt: Adam) -> float:
    """One Adam update followed by the positivity projection.

    Returns the pre-update loss.  A non-finite loss is returned without
    touching the parameters so the caller can report it.
    """
    loss, _ = model.loss(batch, alpha)
    val = float(loss.value)
    if not math.isfinite(val):
        return val
    grads = tc.backward(loss, model.params)
    opt.step(model.params.value, grads)
    model.params.project()
    return val


def _param_norms(model: ChfTPP) -> dict[str, float]:
    return {k: float(np.linalg.norm(v)) for k, v in model.params.value.items()}


def train(model: ChfTPP, train_ds: Dataset, val_ds: Dataset, cfg: TrainConfig,
          log_path=None) -> TrainResult:
    """Adam on mean per-event NLL + alpha * MSE with early stopping on val NLL.

    The returned model carries the parameters of the best validation epoch
    (epoch 0 is the untrained model).
    """
    if train_ds.num_types != val_ds.num_types or train_ds.num_types != model.config.num_types:
        raise ValueError("train, validation and model must agree on num_types")
    model.config.time_scale = float(np.mean(train_ds.all_taus()))
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    result = TrainResult(model)
    start = time.perf_counter()

    def record(epoch, train_loss):
        rep = evaluate(model, val_ds, cfg.eval_batch_size)
        row = {"epoch": epoch, "train_loss": train_loss, "val_nll": rep.nll_per_event,
               "val_f1": rep.weighted_f1, "val_mae": rep.time_mae,
               "elapsed_seconds": time.perf_counter() - start}
        result.history.append(row)
        if log_path is not None:
            write_log(result.history, log_path)
        log.info("epoch %d train %.5f val_nll %.5f f1 %.4f mae %.4f", epoch, train_loss,
                 rep.nll_per_event, rep.weighted_f1, rep.time_mae)
        return rep.nll_per_event

    init_batches = make_batches(train_ds, cfg.batch_size, shuffle=False)
    init_loss = float(np.mean([float(model.loss(b, cfg.alpha)[0].value) for b in init_batches]))
    best = record(0, init_loss)
    best_params = model.params.copy()
    result.best_val_nll, result.best_epoch = best, 0
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        losses = []
        for bi, batch in enumerate(make_batches(train_ds, cfg.batch_size, shuffle=True, seed=rng)):
            val = train_step(model, batch, cfg.alpha, opt)
            if not math.isfinite(val):
                raise TrainingDiverged(epoch, bi, val, _param_norms(model))
            losses.append(val)
        val_nll = record(epoch, float(np.mean(losses)))
        if val_nll < best:
            best, stale = val_nll, 0
            best_params = model.params.copy()
            result.best_val_nll, result.best_epoch = best, epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.params = best_params
    return result


# ------------------------------------------------------------------- files

def write_log(history: list[dict], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        w.writeheader()
        for row in history:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def read_log(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]


def save_checkpoint(model: ChfTPP, path, train_config: TrainConfig | None = None,
                    extra: dict | None = None) -> None:
    blob = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": model.state_dict(),
        "train_config": asdict(train_config) if train_config is not None else None,
    }
    if extra:
        blob.update(extra)
    Path(path).write_text(json.dumps(blob), encoding="utf-8")


def load_checkpoint(path) -> tuple[ChfTPP, dict]:
    blob = json.loads(Path(path).read_text(encoding="utf-8"))
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')}")
    return ChfTPP.from_state_dict(blob["model"]), blob
