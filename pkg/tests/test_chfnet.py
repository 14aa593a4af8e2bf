import numpy as np
import pytest
from scipy import integrate

from chftpp import tensorcore as tc
from chftpp.chfnet import (HorizonExceededError, chf, expected_time, init_chf, log_density,
                           survival)
from chftpp.tensorcore import ACTIVATIONS

from conftest import random_chf_store


def _constant_rate_store(d, gamma):
    store = tc.ParameterStore()
    init_chf(store, np.random.default_rng(0), d, "tanh")
    store.value["v_t"][...] = 0.0
    store.value["v_g"][...] = 0.0
    store.value["b_g"][...] = gamma
    return store


def test_phi_zero_at_origin(rng):
    for act in ACTIVATIONS:
        store = random_chf_store(rng, 5, act)
        ev = chf(store.bind(), rng.normal(size=(9, 5)), np.zeros(9), act)
        assert np.all(ev.phi.value == 0.0)


def test_negative_tau_is_domain_error(rng):
    store = random_chf_store(rng, 3)
    with pytest.raises(ValueError):
        chf(store.bind(), np.zeros(3), -0.1)


def test_negative_residual_switches_off_gamma(rng):
    store = random_chf_store(rng, 4, gamma_positive=False)
    h = rng.normal(size=4)
    ev = chf(store.bind(), h, np.array(1.7))
    assert ev.gamma.value == 0.0
    assert ev.intensity.value > 0


@pytest.mark.parametrize("act", ACTIVATIONS)
def test_monotone_nonnegative_intensity(rng, act):
    for _ in range(30):
        d = int(rng.integers(2, 7))
        store = random_chf_store(rng, d, act, scale=rng.uniform(0.5, 4.0))
        h = rng.normal(size=(20, d))
        grid = np.sort(rng.exponential(2.0, 50))
        tau = np.broadcast_to(grid, (20, 50))
        ev = chf(store.bind(), h, tau, act)
        assert np.all(np.diff(ev.phi.value, axis=-1) >= -1e-12)
        assert np.all(ev.intensity.value >= -1e-12)
        # survival is the complement view of the same fact
        s = np.exp(-ev.phi.value)
        assert np.all(np.diff(s, axis=-1) <= 1e-12)


def test_tanh_intensity_at_least_gamma(rng):
    for _ in range(20):
        store = random_chf_store(rng, 4)
        h = rng.normal(size=(10, 4))
        ev = chf(store.bind(), h, rng.exponential(1.0, 10))
        assert np.all(ev.intensity.value >= ev.gamma.value - 1e-12)


def test_residual_is_additive(rng):
    store = random_chf_store(rng, 5, gamma_positive=True)
    h = rng.normal(size=(6, 5))
    tau = rng.exponential(1.0, 6)
    with_res = chf(store.bind(), h, tau)
    off = store.copy()
    off.value["b_g"][...] = -1e6
    no_res = chf(off.bind(), h, tau)
    np.testing.assert_allclose(no_res.phi.value + with_res.gamma.value * tau,
                               with_res.phi.value, rtol=0, atol=1e-12)


def test_phi_diverges_when_gamma_positive(rng):
    for act in ACTIVATIONS:
        for _ in range(10):
            store = random_chf_store(rng, 4, act, gamma_positive=True)
            h = rng.normal(size=4)
            g = float(chf(store.bind(), h, np.array(0.0), act).gamma.value)
            assert chf(store.bind(), h, np.array(100.0 / g), act).phi.value > 50


def test_unit_exponential_log_density():
    store = _constant_rate_store(3, 1.0)
    tau = np.array([0.1, 1.0, 4.0])
    np.testing.assert_allclose(log_density(store.bind(), np.zeros(3), tau).value, -tau,
                               rtol=0, atol=1e-15)


@pytest.mark.parametrize("act", ACTIVATIONS)
def test_density_normalises(rng, act):
    for _ in range(4):
        store = random_chf_store(rng, 4, act, gamma_positive=True)
        p = store.bind()
        h = rng.normal(size=4)

        def dens(t):
            return float(np.exp(log_density(p, h, np.array(t), act).value))

        total = integrate.quad(dens, 0, np.inf, limit=400)[0]
        assert abs(total - 1.0) < 1e-3


@pytest.mark.parametrize("gamma,expect,tol", [(2.0, 0.5, 1e-4), (1.0, 1.0, 1e-4)])
def test_expected_time_exponential(gamma, expect, tol):
    store = _constant_rate_store(3, gamma)
    assert abs(expected_time(store.bind(), np.zeros(3)) - expect) < tol


def test_expected_time_two_quadratures_agree(rng):
    for _ in range(5):
        store = random_chf_store(rng, 4, gamma_positive=True)
        p = store.bind()
        h = rng.normal(size=4)
        et = expected_time(p, h)

        def first_moment(s):
            ev = chf(p, h, np.array(s))
            return s * float(ev.intensity.value) * float(np.exp(-ev.phi.value))

        ref = integrate.quad(first_moment, 0, np.inf, limit=400)[0]
        assert abs(et - ref) < 1e-3 * max(1.0, ref)


def test_expected_time_horizon_error_when_saturated(rng):
    store = random_chf_store(rng, 3, gamma_positive=False)
    # bounded tanh f: survival levels off above zero
    store.value["v_t"][...] = 0.01
    with pytest.raises(HorizonExceededError) as exc:
        expected_time(store.bind(), np.zeros(3), horizon_factor=100.0)
    assert exc.value.partial > 0
    assert survival(store.bind(), np.zeros(3), np.array(1e6)) > 0.5


def test_gradients_flow_through_both_f_terms(rng):
    """f(0) shares parameters with f(tau); the bias b_t3 cancels exactly."""
    store = random_chf_store(rng, 3)
    p = store.bind()
    ev = chf(p, rng.normal(size=3), np.array(0.9))
    grads = tc.backward(tc.sum(ev.phi), store)
    assert grads["b_t3"] == 0.0
    assert np.any(grads["b_t1"] != 0)
