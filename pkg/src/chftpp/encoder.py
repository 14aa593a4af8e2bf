"""Event embedding and recurrent history encoder."""
from __future__ import annotations

from collections.abc import Mapping

import numpy as np

from . import tensorcore as tc
from .data import Batch, EventSequence
from .tensorcore import Var

CELLS = ("vanilla", "gated")


def init_encoder(store: tc.ParameterStore, rng: np.random.Generator, num_types: int,
                 d: int, d_m: int, cell: str = "vanilla") -> None:
    if cell not in CELLS:
        raise ValueError(f"unknown cell {cell!r}")
    fan = d + d_m + 1
    s = 1.0 / np.sqrt(fan)
    store.add("emb", rng.uniform(-1, 1, (num_types, d_m)) / np.sqrt(max(d_m, 1)))
    gates = ("h",) if cell == "vanilla" else ("z", "r", "n")
    for g in gates:
        store.add(f"W_{g}", rng.uniform(-s, s, (d, fan)))
        store.add(f"b_{g}", rng.uniform(-s, s, d))


def embed_event(p: Mapping[str, Var], type_id, tau) -> Var:
    """``[embedding row || tau]``; vectorised over arrays of events."""
    type_id = np.asarray(type_id, dtype=np.int64)
    tau = np.asarray(tau, dtype=np.float64)
    rows = tc.take_rows(p["emb"], type_id)
    return tc.concat([rows, tc.const(tau.reshape(tau.shape + (1,)))], axis=-1)


def rnn_step(p: Mapping[str, Var], h_prev: Var, e: Var, cell: str = "vanilla") -> Var:
    x = tc.concat([h_prev, e], axis=-1)
    if cell == "vanilla":
        return tc.tanh(x @ p["W_h"].T + p["b_h"])
    # GRU update
    z = tc.sigmoid(x @ p["W_z"].T + p["b_z"])
    r = tc.sigmoid(x @ p["W_r"].T + p["b_r"])
    n = tc.tanh(tc.concat([r * h_prev, e], axis=-1) @ p["W_n"].T + p["b_n"])
    return (1.0 - z) * n + z * h_prev


def hidden_size(p: Mapping[str, Var]) -> int:
    return int(p["b_h"].shape[0] if "b_h" in p else p["b_z"].shape[0])


def encode_sequence(p: Mapping[str, Var], seq: EventSequence, cell: str = "vanilla") -> list[Var]:
    """History vectors ``h_0 .. h_N``; ``h_0`` is zeros."""
    h = tc.const(np.zeros(hidden_size(p)))
    out = [h]
    for m, tau in zip(seq.types, seq.taus):
        h = rnn_step(p, h, embed_event(p, m, tau), cell)
        out.append(h)
    return out


def encode_batch(p: Mapping[str, Var], batch: Batch, cell: str = "vanilla") -> list[Var]:
    """Per-step ``(B, d)`` histories ``h_0 .. h_L`` for a padded batch.

    Padding only trails the real events, so the states that condition real
    events never see padded inputs.
    """
    h = tc.const(np.zeros((batch.size, hidden_size(p))))
    out = [h]
    for i in range(batch.max_len):
        h = rnn_step(p, h, embed_event(p, batch.types[:, i], batch.taus[:, i]), cell)
        out.append(h)
    return out
