"""Monotone cumulative hazard network.

``phi(tau | h) = f(tau) - f(0) + gamma * tau`` where ``f`` is a three-layer
network whose tau path only passes through nonnegative weights and
monotone activations, and ``gamma = relu(v_g . h + b_g)``.  Subtracting
``f(0)`` pins ``phi(0) = 0``; the residual keeps ``phi`` unbounded whenever
``gamma > 0``.  The intensity is the exact forward tangent ``d phi / d tau``.
"""
from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .tensorcore import Var

# activations whose shape parameter is trained
ETA_INIT = {"prelu": 0.25, "softplus": 1.0}


class HorizonExceededError(RuntimeError):
    """Survival did not decay below the cutoff within the horizon."""

    def __init__(self, message: str, partial: float):
        self.partial = partial
        super().__init__(f"{message} (partial integral {partial:.6g})")


@dataclass
class ChfEvaluation:
    phi: Var
    intensity: Var
    gamma: Var


def init_chf(store: tc.ParameterStore, rng: np.random.Generator, d: int,
             activation: str = "tanh") -> None:
    if activation not in tc.ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    s1, s2 = 1.0 / math.sqrt(d + 1), 1.0 / math.sqrt(d)
    w1_mask = np.zeros((d, d + 1), dtype=bool)
    w1_mask[:, d] = True
    store.add("W_t1", rng.uniform(-s1, s1, (d, d + 1)), positive=w1_mask)
    store.add("b_t1", rng.uniform(-s1, s1, d))
    store.add("W_t2", rng.uniform(-s2, s2, (d, d)), positive=True)
    store.add("b_t2", rng.uniform(-s2, s2, d))
    store.add("v_t", rng.uniform(-s2, s2, d), positive=True)
    store.add("b_t3", rng.uniform(-s2, s2, ()))
    store.add("v_g", rng.uniform(-s2, s2, d))
    store.add("b_g", rng.uniform(-s2, s2, ()))
    if activation in ETA_INIT:
        store.add("eta", ETA_INIT[activation], positive=True)


def _sigma(p, x, activation):
    return tc.activation(activation, x, p.get("eta"))


def _f(p, pre, activation):
    z2 = _sigma(p, pre, activation)
    z3 = _sigma(p, z2 @ p["W_t2"].T + p["b_t2"], activation)
    return z3 @ p["v_t"] + p["b_t3"]


def chf(p: Mapping[str, Var], h: Var, tau, activation: str = "tanh",
        with_intensity: bool = True) -> ChfEvaluation:
    """Evaluate ``phi`` (and its tau-derivative) at ``tau``.

    ``h`` is ``(..., d)``; ``tau`` must broadcast against ``h.shape[:-1]``,
    optionally with extra trailing axes (a tau grid per history).
    """
    h = h if isinstance(h, Var) else tc.const(h)
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(tau < 0):
        raise ValueError("tau must be nonnegative")
    d = h.shape[-1]
    W1 = p["W_t1"]
    a = h @ W1[:, :d].T + p["b_t1"]
    gamma = tc.relu(h @ p["v_g"] + p["b_g"])
    extra = tau.ndim - (h.value.ndim - 1)
    if extra > 0:
        a = tc.reshape(a, a.shape[:-1] + (1,) * extra + (d,))
        gamma = tc.reshape(gamma, gamma.shape + (1,) * extra)
    w_tau = W1[:, d]
    t = tc.tau_input(tau) if with_intensity else tc.const(tau)
    t_col = tc.reshape(t, tau.shape + (1,))
    f_tau = _f(p, a + t_col * w_tau, activation)
    zero_col = tc.const(np.zeros(tau.shape + (1,)))
    f_zero = _f(p, a + zero_col * w_tau, activation)
    phi = f_tau - f_zero + gamma * t
    if with_intensity:
        intensity = tc.tangent_of(phi)
    else:
        intensity = tc.const(np.full(phi.shape, np.nan))
    return ChfEvaluation(phi, intensity, gamma)


def log_density(p: Mapping[str, Var], h: Var, tau, activation: str = "tanh") -> Var:
    """``log lambda(tau) - phi(tau)`` with the guarded log."""
    ev = chf(p, h, tau, activation)
    return tc.safe_log(ev.intensity) - ev.phi


def survival(p, h, tau, activation="tanh") -> np.ndarray:
    return np.exp(-chf(p, h, tau, activation, with_intensity=False).phi.value)


def _trapezoid(p, h, activation, upper, n) -> float:
    grid = np.linspace(0.0, upper, n + 1)
    s = survival(p, h, grid, activation)
    return float((upper / n) * (s.sum() - 0.5 * (s[0] + s[-1])))


def expected_time(p: Mapping[str, Var], h, activation: str = "tanh", scale: float = 1.0,
                  rtol: float = 1e-6, cutoff: float = 1e-9, horizon_factor: float = 1e4,
                  max_panels: int = 1 << 22) -> float:
    """Mean next inter-event time, ``integral_0^inf exp(-phi(s)) ds``.

    Composite trapezoid with initial step ``1e-3 * scale``; the panel count
    doubles until successive estimates agree to ``rtol``.  The upper limit is
    the first doubling of the step at which survival drops below ``cutoff``.
    """
    h = np.asarray(h.value if isinstance(h, Var) else h, dtype=np.float64)
    if h.ndim != 1:
        raise ValueError("expected_time takes a single history vector")
    step = 1e-3 * scale
    horizon = horizon_factor * scale
    upper = step
    while survival(p, h, np.array(upper), activation) >= cutoff:
        upper *= 2.0
        if upper > horizon:
            partial = _trapezoid(p, h, activation, horizon, 1 << 16)
            raise HorizonExceededError(
                f"survival above {cutoff:g} at horizon {horizon:g}", partial)
    n = max(int(math.ceil(upper / step)), 2)
    prev = _trapezoid(p, h, activation, upper, n)
    while True:
        n *= 2
        cur = _trapezoid(p, h, activation, upper, n)
        if abs(cur - prev) <= rtol * abs(cur) or n >= max_panels:
            return cur
        prev = cur
