"""Type head and time head."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chftpp import tensorcore as tc
from chftpp.tensorcore import numeric_grad
from chftpp.timenet import clamp, init_timenet, predict_time, time_loss
from chftpp.typenet import (argmax_type, init_typenet, predict_type, type_distribution,
                            type_log_probs)


def _type_store(rng, d=4, M=3):
    store = tc.ParameterStore()
    init_typenet(store, rng, d, M)
    return store


def _time_store(rng, d=4):
    store = tc.ParameterStore()
    init_timenet(store, rng, d)
    return store


# ------------------------------------------------------------------ types

def test_zero_parameters_uniform(rng):
    store = _type_store(rng, M=5)
    for k in store.names():
        store.value[k][...] = 0.0
    np.testing.assert_allclose(type_distribution(store.bind(), rng.normal(size=4), 0.3),
                               np.full(5, 0.2), rtol=0, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0, 20), st.floats(-50, 50))
def test_normalised_and_shift_invariant(seed, tau, c):
    rng = np.random.default_rng(seed)
    store = _type_store(rng, M=4)
    h = rng.normal(size=(3, 4))
    p1 = type_distribution(store.bind(), h, tau)
    assert np.all(p1 > 0)
    np.testing.assert_allclose(p1.sum(axis=-1), 1.0, rtol=0, atol=1e-12)
    store.value["b_m2"] += c
    np.testing.assert_allclose(type_distribution(store.bind(), h, tau), p1, rtol=0, atol=1e-12)


def test_two_type_logits_one_zero(rng):
    store = _type_store(rng, M=2)
    for k in store.names():
        store.value[k][...] = 0.0
    store.value["b_m2"][0] = 1.0
    np.testing.assert_allclose(type_distribution(store.bind(), np.zeros(4), 1.0),
                               [0.7311, 0.2689], atol=1e-4)


def test_argmax_ties_and_plain():
    assert argmax_type(np.full(4, 0.25)) == 0
    assert argmax_type(np.array([0.1, 0.7, 0.2])) == 1


def test_prediction_flips_with_tau():
    d = 2
    store = _type_store(np.random.default_rng(0), d=d, M=2)
    for k in store.names():
        store.value[k][...] = 0.0
    store.value["W_m1"][0, d] = 1.0          # hidden unit 0 tracks tau
    store.value["W_m2"][1, 0] = 1.0          # which pushes type 1 up
    store.value["b_m2"][0] = 5.0             # type 0 wins near tau = 0
    p = store.bind()
    assert predict_type(p, np.zeros(d), 0.0) == 0
    assert predict_type(p, np.zeros(d), 10.0) == 1


def test_cross_entropy_gradient(rng):
    store = _type_store(rng)
    h = rng.normal(size=(5, 4))
    tau = rng.exponential(1.0, 5)
    m = np.array([0, 2, 1, 1, 0])

    def loss():
        return -tc.sum(tc.pick(type_log_probs(store.bind(), h, tau), m))

    grads = {k: v.copy() for k, v in tc.backward(loss(), store).items()}
    for k in store.names():
        num = numeric_grad(lambda: float(loss().value), [store.value[k]])[0]
        err = np.abs(grads[k] - num) / np.maximum(np.abs(num), 1e-7)
        assert err.max() < 1e-4, k


# ------------------------------------------------------------------- time

def test_zero_time_head_predicts_zero(rng):
    store = _time_store(rng)
    for k in store.names():
        store.value[k][...] = 0.0
    assert predict_time(store.bind(), rng.normal(size=4)).value == 0.0


def test_literal_form_is_affine_of_affine(rng):
    store = _time_store(rng)
    h = rng.normal(size=(6, 4))
    P = store.value
    expect = (h @ P["W_p1"].T + P["b_p1"]) @ P["v_p"] + P["b_p2"]
    np.testing.assert_allclose(predict_time(store.bind(), h).value, expect, rtol=1e-14)
    with_relu = np.maximum(h @ P["W_p1"].T + P["b_p1"], 0) @ P["v_p"] + P["b_p2"]
    np.testing.assert_allclose(predict_time(store.bind(), h, hidden_relu=True).value, with_relu,
                               rtol=1e-14)


def test_time_loss_examples():
    assert time_loss(np.array(3.0), 3.0).value == 0.0
    assert time_loss(np.array(2.0), 3.0).value == 1.0
    assert time_loss(np.array([1.0, 3.0]), np.array([0.0, 0.0])).value == 5.0
    masked = time_loss(np.array([1.0, 3.0, 100.0]), np.zeros(3), np.array([1, 1, 0]))
    assert masked.value == 5.0


def test_bias_gradient_of_squared_error(rng):
    store = _time_store(rng)
    h = rng.normal(size=4)
    p = store.bind()
    pred = predict_time(p, h)
    tc.backward(time_loss(pred, 0.7), store)
    assert abs(store.grad["b_p2"] - 2 * (pred.value - 0.7)) < 1e-10


def test_clamp_nonnegative():
    np.testing.assert_array_equal(clamp(np.array([-2.0, 0.0, 1.5])), [0.0, 0.0, 1.5])


def test_bias_only_fit_converges_to_mean():
    # interval scale of the largest real corpus: mean 1.18, std 1.66
    rng = np.random.default_rng(7)
    sigma2 = np.log(1 + (1.66 / 1.18) ** 2)
    taus = rng.lognormal(np.log(1.18) - sigma2 / 2, np.sqrt(sigma2), 4000)
    store = _time_store(rng)
    for k in store.names():
        store.value[k][...] = 0.0
    h = np.zeros((taus.size, 4))
    for _ in range(200):
        loss = time_loss(predict_time(store.bind(), h), taus)
        tc.backward(loss, store)
        store.value["b_p2"] -= 0.1 * store.grad["b_p2"]
    assert abs(store.value["b_p2"] - taus.mean()) < 1e-3
    assert abs(taus.mean() - 1.18) < 0.1
