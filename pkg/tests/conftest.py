import numpy as np
import pytest

from chftpp import tensorcore as tc
from chftpp.chfnet import init_chf
from chftpp.data import EventSequence
from chftpp.model import ChfTPP, ModelConfig


def random_chf_store(rng, d, activation="tanh", scale=1.0, gamma_positive=None):
    """Projected random CHF parameters; ``scale`` widens the weight draws."""
    store = tc.ParameterStore()
    init_chf(store, rng, d, activation)
    for k in store.names():
        if k != "eta":
            store.value[k] *= scale * rng.uniform(0.5, 2.0)
    if "eta" in store:
        store.value["eta"][...] = rng.uniform(0.1, 3.0)
    if gamma_positive is True:
        store.value["v_g"][...] = 0.0
        store.value["b_g"][...] = rng.uniform(0.05, 2.0)
    elif gamma_positive is False:
        store.value["v_g"][...] = 0.0
        store.value["b_g"][...] = -1.0
    store.project()
    return store


def closed_form_tanh_intensity(P, h, tau):
    """d phi / d tau for the tanh net, written out with the chain rule."""
    d = h.shape[-1]
    W1, w_tau = P["W_t1"][:, :d], P["W_t1"][:, d]
    z2 = np.tanh(h @ W1.T + P["b_t1"] + tau[..., None] * w_tau)
    z3 = np.tanh(z2 @ P["W_t2"].T + P["b_t2"])
    inner = ((1 - z2 ** 2) * w_tau) @ P["W_t2"].T
    gamma = np.maximum(h @ P["v_g"] + P["b_g"], 0.0)
    return ((1 - z3 ** 2) * inner) @ P["v_t"] + gamma


def degenerate_model(num_types=2, gamma=1.0, d=4, d_m=2):
    """f == 0, constant rate ``gamma``, uniform marks: an exponential-uniform process."""
    model = ChfTPP(ModelConfig(num_types, d=d, d_m=d_m))
    for k in ("v_t", "v_g", "W_m1", "b_m1", "W_m2", "b_m2"):
        model.params.value[k][...] = 0.0
    model.params.value["b_g"][...] = gamma
    return model


def random_sequences(rng, n, num_types, lo=1, hi=8):
    out = []
    for length in rng.integers(lo, hi + 1, n):
        out.append(EventSequence.from_taus(rng.integers(0, num_types, length),
                                           rng.exponential(0.7, length) + 1e-3))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------- acceptance lines

_ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, {})

    def record(label, ok, detail):
        label = str(label)
        lines[label] = f"criterion {label:>3}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(lines[label])
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        order = sorted(lines, key=lambda k: (int(k.rstrip("abcdefgh")), k))
        for k in order:
            terminalreporter.write_line(lines[k])
