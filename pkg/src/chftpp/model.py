"""The full marked point process model: encoder + CHF + type head + time head."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensorcore as tc
from .chfnet import chf, expected_time, init_chf
from .data import Batch, EventSequence
from .encoder import encode_batch, encode_sequence, init_encoder
from .tensorcore import ParameterStore, Var
from .timenet import init_timenet, predict_time, time_loss
from .typenet import init_typenet, type_log_probs


@dataclass
class ModelConfig:
    num_types: int
    d: int = 64
    d_m: int = 32
    activation: str = "tanh"
    cell: str = "vanilla"
    time_hidden_relu: bool = False
    # typical inter-event time; sets the quadrature step for expected_time
    time_scale: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        return cls(**d)


@dataclass
class BatchOutput:
    nll: Var          # (B*L,) per-event negative log-likelihood, 0 on padding
    tau_bar: Var      # (B*L,) raw time-head prediction
    mask: np.ndarray  # (B*L,)
    taus: np.ndarray  # (B*L,)
    types: np.ndarray  # (B*L,)
    hist: Var         # (B*L, d) conditioning history h_{i-1}


class ChfTPP:
    def __init__(self, config: ModelConfig, params: ParameterStore | None = None, seed: int = 0):
        self.config = config
        if params is None:
            params = self.init_params(config, seed)
        self.params = params

    @staticmethod
    def init_params(config: ModelConfig, seed: int = 0) -> ParameterStore:
        """Uniform(+-1/sqrt(fan_in)) weights; constrained entries start at |w|."""
        rng = np.random.default_rng(seed)
        store = ParameterStore()
        init_encoder(store, rng, config.num_types, config.d, config.d_m, config.cell)
        init_chf(store, rng, config.d, config.activation)
        init_typenet(store, rng, config.d, config.num_types)
        init_timenet(store, rng, config.d)
        store.project()
        return store

    # ----------------------------------------------------------- forward

    def forward(self, batch: Batch, p: dict[str, Var] | None = None) -> BatchOutput:
        cfg = self.config
        if p is None:
            p = self.params.bind()
        hs = encode_batch(p, batch, cfg.cell)
        B, L = batch.size, batch.max_len
        # event i is conditioned on h_{i-1}
        hist = tc.reshape(tc.stack(hs[:L], axis=1), (B * L, cfg.d))
        taus = batch.taus.reshape(-1)
        types = batch.types.reshape(-1)
        mask = batch.mask.reshape(-1)
        ev = chf(p, hist, taus, cfg.activation)
        log_pm = tc.pick(type_log_probs(p, hist, taus), types)
        # padded slots are zeroed here so no downstream sum can pick them up
        nll = -(tc.safe_log(ev.intensity) - ev.phi + log_pm) * mask
        tau_bar = predict_time(p, hist, cfg.time_hidden_relu)
        return BatchOutput(nll, tau_bar, mask, taus, types, hist)

    def loss(self, batch: Batch, alpha: float, p: dict[str, Var] | None = None):
        """Mean per-event NLL + alpha * mean per-event squared time error."""
        out = self.forward(batch, p)
        n = out.mask.sum()
        nll = tc.sum(out.nll) * (1.0 / n)
        mse = time_loss(out.tau_bar, out.taus, out.mask)
        return nll + alpha * mse, out

    def sequence_nll(self, seq: EventSequence) -> float:
        """Total NLL of one sequence, computed without batching."""
        cfg = self.config
        p = self.params.bind()
        hs = encode_sequence(p, seq, cfg.cell)
        total = 0.0
        for i, (m, tau) in enumerate(zip(seq.types, seq.taus)):
            ev = chf(p, hs[i], tau, cfg.activation)
            log_pm = type_log_probs(p, hs[i], tau).value[m]
            total -= float(tc.safe_log(ev.intensity).value - ev.phi.value) + float(log_pm)
        return total

    def batch_nll(self, batch: Batch) -> np.ndarray:
        """Per-sequence NLL totals for a batch."""
        out = self.forward(batch)
        return out.nll.value.reshape(batch.size, batch.max_len).sum(axis=1)

    # -------------------------------------------------------- prediction

    def history(self, seq: EventSequence) -> np.ndarray:
        """``(N+1, d)`` array of history vectors ``h_0..h_N``."""
        hs = encode_sequence(self.params.bind(), seq, self.config.cell)
        return np.stack([h.value for h in hs])

    def expected_time(self, h: np.ndarray, **kw) -> float:
        kw.setdefault("scale", self.config.time_scale)
        return expected_time(self.params.bind(), h, self.config.activation, **kw)

    # ------------------------------------------------------ serialisation

    def state_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                       for k, v in self.params.value.items()},
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> ChfTPP:
        config = ModelConfig.from_dict(state["config"])
        model = cls(config)
        model.params.load({k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
                           for k, v in state["params"].items()})
        missing = set(model.params.names()) - set(state["params"])
        if missing:
            raise KeyError(f"checkpoint lacks parameters {sorted(missing)}")
        return model
