"""Time-dependent categorical head ``P(m | tau, h)``."""
from __future__ import annotations

import math
from collections.abc import Mapping

import numpy as np

from . import tensorcore as tc
from .tensorcore import Var


def init_typenet(store: tc.ParameterStore, rng: np.random.Generator, d: int, num_types: int) -> None:
    s1, s2 = 1.0 / math.sqrt(d + 1), 1.0 / math.sqrt(d)
    store.add("W_m1", rng.uniform(-s1, s1, (d, d + 1)))
    store.add("b_m1", rng.uniform(-s1, s1, d))
    store.add("W_m2", rng.uniform(-s2, s2, (num_types, d)))
    store.add("b_m2", rng.uniform(-s2, s2, num_types))


def type_logits(p: Mapping[str, Var], h: Var, tau) -> Var:
    h = h if isinstance(h, Var) else tc.const(h)
    tau = np.broadcast_to(np.asarray(tau, dtype=np.float64), h.shape[:-1])
    x = tc.concat([h, tc.const(tau[..., None])], axis=-1)
    y = tc.relu(x @ p["W_m1"].T + p["b_m1"])
    return y @ p["W_m2"].T + p["b_m2"]


def type_log_probs(p: Mapping[str, Var], h: Var, tau) -> Var:
    return tc.log_softmax(type_logits(p, h, tau), axis=-1)


def type_distribution(p: Mapping[str, Var], h, tau) -> np.ndarray:
    return np.exp(type_log_probs(p, h, tau).value)


def argmax_type(probs: np.ndarray) -> np.ndarray:
    """Most probable type; ties go to the smallest index."""
    return np.argmax(probs, axis=-1)


def predict_type(p: Mapping[str, Var], h, tau_hat) -> np.ndarray:
    return argmax_type(type_distribution(p, h, tau_hat))
