"""Direct next-interval regressor trained with squared error.

The default head is the literal composition of two affine maps (which is
itself affine in ``h``); ``hidden_relu=True`` inserts a relu between them.
"""
from __future__ import annotations

import math
from collections.abc import Mapping

import numpy as np

from . import tensorcore as tc
from .tensorcore import Var


def init_timenet(store: tc.ParameterStore, rng: np.random.Generator, d: int) -> None:
    s = 1.0 / math.sqrt(d)
    store.add("W_p1", rng.uniform(-s, s, (d, d)))
    store.add("b_p1", rng.uniform(-s, s, d))
    store.add("v_p", rng.uniform(-s, s, d))
    store.add("b_p2", rng.uniform(-s, s, ()))


def predict_time(p: Mapping[str, Var], h: Var, hidden_relu: bool = False) -> Var:
    """Raw (unclamped) prediction; use :func:`clamp` for reporting."""
    h = h if isinstance(h, Var) else tc.const(h)
    y = h @ p["W_p1"].T + p["b_p1"]
    if hidden_relu:
        y = tc.relu(y)
    return y @ p["v_p"] + p["b_p2"]


def clamp(pred) -> np.ndarray:
    return np.maximum(np.asarray(pred.value if isinstance(pred, Var) else pred), 0.0)


def time_loss(pred, target, mask=None) -> Var:
    """Squared error, averaged over entries where ``mask`` is 1."""
    pred = pred if isinstance(pred, Var) else tc.const(pred)
    target = np.asarray(target, dtype=np.float64)
    err = tc.square(pred - target)
    if mask is None:
        return tc.mean(err) if err.value.ndim else err
    mask = np.asarray(mask, dtype=np.float64)
    return tc.sum(err * mask) * (1.0 / mask.sum())
