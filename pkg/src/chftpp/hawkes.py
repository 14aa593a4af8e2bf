"""Multivariate exponential-kernel Hawkes process: simulation and exact likelihood.

``lambda_k(t) = mu_k + sum_{t_i < t} A[k, m_i] exp(-beta (t - t_i))``

``A[k, j]`` is the jump in the type-``k`` intensity when a type-``j`` event
fires; ``beta`` is shared by all pairs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, EventSequence


@dataclass(frozen=True)
class HawkesParams:
    mu: np.ndarray
    A: np.ndarray
    beta: float

    def __post_init__(self):
        mu = np.array(self.mu, dtype=np.float64)
        A = np.array(self.A, dtype=np.float64)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "beta", float(self.beta))
        M = mu.size
        if mu.ndim != 1 or M < 1 or A.shape != (M, M):
            raise ValueError(f"mu must be (M,) and A (M, M); got {mu.shape}, {A.shape}")
        if np.any(mu <= 0) or not np.all(np.isfinite(mu)):
            raise ValueError("base rates must be positive and finite")
        if np.any(A < 0) or not np.all(np.isfinite(A)):
            raise ValueError("excitation matrix must be nonnegative and finite")
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    @property
    def num_types(self) -> int:
        return int(self.mu.size)

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A / self.beta))))

    def is_stationary(self) -> bool:
        return self.spectral_radius < 1.0

    def stationary_rates(self) -> np.ndarray:
        """Per-type long-run rates ``(I - A/beta)^-1 mu``."""
        M = self.num_types
        return np.linalg.solve(np.eye(M) - self.A / self.beta, self.mu)

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "A": self.A.tolist(), "beta": self.beta}

    @classmethod
    def from_dict(cls, d: dict) -> HawkesParams:
        return cls(d["mu"], d["A"], d["beta"])


@dataclass(frozen=True)
class SimConfig:
    """Either a fixed observation window ``horizon`` or a ``mean_length``.

    In length mode each sequence length is ``1 + Poisson(mean_length - 1)``,
    drawn independently of the process, and simulation stops after that many
    events.  Because the stopping rule ignores the event history, the
    event-terms likelihood of such data is an honest lower bound for any
    model of the next event.
    """

    num_sequences: int
    horizon: float | None = None
    seed: int = 0
    mean_length: float | None = None

    def __post_init__(self):
        if self.num_sequences < 1:
            raise ValueError("num_sequences must be >= 1")
        if (self.horizon is None) == (self.mean_length is None):
            raise ValueError("set exactly one of horizon and mean_length")
        if self.horizon is not None and not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.mean_length is not None and not self.mean_length >= 1:
            raise ValueError("mean_length must be >= 1")


def intensity(params: HawkesParams, history: EventSequence | None, k: int | None, t: float):
    """``lambda_k(t)`` given events strictly before ``t`` (all types if ``k`` is None)."""
    lam = params.mu.copy()
    if history is not None and len(history):
        if t < history.times[-1]:
            raise ValueError("query time precedes the last history event")
        decay = np.exp(-params.beta * (t - history.times))
        lam = lam + params.A[:, history.types] @ decay
    return lam if k is None else float(lam[k])


def _simulate_one(params: HawkesParams, horizon: float, rng: np.random.Generator,
                  max_events: int | None = None):
    mu, A, beta = params.mu, params.A, params.beta
    M = mu.size
    excite = np.zeros(M)  # intensity above baseline just after the current time
    t = 0.0
    types, times = [], []
    while max_events is None or len(types) < max_events:
        lam_bar = mu.sum() + excite.sum()
        w = rng.exponential(1.0 / lam_bar)
        t += w
        if t > horizon:
            break
        excite = excite * np.exp(-beta * w)
        lam = mu + excite
        total = lam.sum()
        if total > lam_bar * (1 + 1e-12):
            raise AssertionError("thinning bound violated")
        if rng.uniform() * lam_bar <= total:
            k = int(rng.choice(M, p=lam / total))
            types.append(k)
            times.append(t)
            excite = excite + A[:, k]
    return types, times


def simulate(params: HawkesParams, cfg: SimConfig) -> Dataset:
    """Ogata thinning.

    Between events the total intensity only decays, so its value right after
    the last accepted (or rejected) point bounds it until the next proposal.
    Sequence ``i`` draws from its own stream seeded by ``(seed, i)``.  In
    horizon mode, empty realisations are redrawn from the same stream.
    """
    if not params.is_stationary():
        raise ValueError(f"spectral radius {params.spectral_radius:.3f} >= 1; process is explosive")
    seqs = []
    for i in range(cfg.num_sequences):
        rng = np.random.default_rng([cfg.seed, i])
        if cfg.mean_length is not None:
            n = 1 + int(rng.poisson(cfg.mean_length - 1.0))
            types, times = _simulate_one(params, np.inf, rng, max_events=n)
        else:
            while True:
                types, times = _simulate_one(params, cfg.horizon, rng)
                if types:
                    break
        seqs.append(EventSequence(types, times))
    return Dataset(tuple(seqs), params.num_types)


def simulate_counts(params: HawkesParams, horizon: float, n: int, seed: int = 0) -> np.ndarray:
    """Per-type event counts of ``n`` raw realisations (empty ones kept)."""
    out = np.zeros((n, params.num_types), dtype=np.int64)
    for i in range(n):
        types, _ = _simulate_one(params, horizon, np.random.default_rng([seed, i]))
        out[i] = np.bincount(np.asarray(types, dtype=np.int64), minlength=params.num_types)
    return out


def _event_intensities(params: HawkesParams, seq: EventSequence) -> np.ndarray:
    """``(N, M)`` matrix of ``lambda_k(t_i)`` (left limits)."""
    t, m = seq.times, seq.types
    dt = t[:, None] - t[None, :]
    decay = np.where(dt > 0, np.exp(-params.beta * np.where(dt > 0, dt, 0.0)), 0.0)
    return params.mu[None, :] + decay @ params.A[:, m].T


def compensator(params: HawkesParams, seq: EventSequence, upper: float) -> np.ndarray:
    """Per-type ``integral_0^upper lambda_k(s) ds`` in closed form."""
    t, m = seq.times, seq.types
    keep = t <= upper
    w = (1.0 - np.exp(-params.beta * (upper - t[keep]))) / params.beta
    return params.mu * upper + params.A[:, m[keep]] @ w


def oracle_nll(params: HawkesParams, seq: EventSequence, horizon: float | None = None) -> float:
    """Exact negative log-likelihood of ``seq`` observed on ``[0, horizon]``.

    With ``horizon=None`` the window ends at the last event, which is the
    event-terms-only likelihood (no trailing survival factor).
    """
    T = float(seq.times[-1]) if horizon is None else float(horizon)
    if T < seq.times[-1]:
        raise ValueError("horizon precedes the last event")
    lam = _event_intensities(params, seq)
    ll = np.log(lam[np.arange(len(seq)), seq.types]).sum()
    return float(-ll + compensator(params, seq, T).sum())


def oracle_nll_factored(params: HawkesParams, seq: EventSequence, horizon: float | None = None) -> float:
    """Same likelihood via total intensity times mark probability."""
    T = float(seq.times[-1]) if horizon is None else float(horizon)
    lam = _event_intensities(params, seq)
    total = lam.sum(axis=1)
    p_mark = lam[np.arange(len(seq)), seq.types] / total
    ll = np.sum(np.log(total) + np.log(p_mark))
    return float(-ll + compensator(params, seq, T).sum())


def dataset_oracle_nll(params: HawkesParams, ds: Dataset, horizon: float | None = None) -> dict:
    total = sum(oracle_nll(params, s, horizon) for s in ds)
    return {
        "nll_per_sequence": total / len(ds),
        "nll_per_event": total / ds.num_events,
    }


# ------------------------------------------------------------------ presets

def random_excitation(M: int, beta: float, radius: float, density: float,
                      rng: np.random.Generator) -> np.ndarray:
    """Sparse nonnegative matrix scaled so ``rho(A / beta) = radius``."""
    A = rng.uniform(0.2, 1.0, (M, M)) * (rng.uniform(size=(M, M)) < density)
    np.fill_diagonal(A, rng.uniform(0.5, 1.0, M))
    rho = np.max(np.abs(np.linalg.eigvals(A / beta)))
    return A * (radius / rho)


@dataclass(frozen=True)
class Preset:
    name: str
    params: HawkesParams
    horizon: float
    mean_length: float
    notes: str = field(default="")


def preset(name: str) -> Preset:
    """Named desk-scale generators with nine types."""
    M = 9
    if name == "hawkes1-like":
        rng = np.random.default_rng(20240101)
        beta = 1.0
        A = random_excitation(M, beta, 0.5, 0.2, rng)
        return Preset(name, HawkesParams(np.full(M, 0.1), A, beta), horizon=3.7, mean_length=7.4,
                      notes="mu=0.1, rho(A/beta)=0.5, beta=1")
    if name == "hawkes2-like":
        rng = np.random.default_rng(20240202)
        beta = 4.0
        A = random_excitation(M, beta, 0.8, 0.2, rng)
        return Preset(name, HawkesParams(np.full(M, 0.1), A, beta), horizon=2.6, mean_length=10.4,
                      notes="mu=0.1, rho(A/beta)=0.8, beta=4")
    raise KeyError(f"unknown preset {name!r}; choose hawkes1-like or hawkes2-like")


PRESETS = ("hawkes1-like", "hawkes2-like")


def corpus_metadata(params: HawkesParams, cfg: SimConfig, preset_name: str | None = None) -> dict:
    return {
        "num_types": params.num_types,
        "generator": "hawkes-exponential",
        "preset": preset_name,
        "hawkes_params": params.to_dict(),
        "horizon": cfg.horizon,
        "mean_length": cfg.mean_length,
        "num_sequences": cfg.num_sequences,
        "seed": cfg.seed,
    }


def params_from_json(path) -> HawkesParams:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return HawkesParams.from_dict(raw.get("hawkes_params", raw))
