import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dissd.cluster_sim import Cluster, Machine
from dissd.dissd_mest import (
    DegenerateCurvatureError,
    DissdConfig,
    auto_lambda_scale,
    curvature_from_residuals,
    dissd_round,
    initial_state,
    local_gradient,
    local_h,
    mest_tau,
    next_rate,
    run_dissd_mest,
)
from dissd.model_zoo import absolute_loss, biweight_kernel, huber_loss, logistic_link, square_loss
from dissd.scio import PrecisionEstimate, scio_from_sigma
from dissd.synth_data import make_ground_truth, sample_cluster
from dissd.tensor_core import empirical_second_moment, hard_threshold


def exact_precision(sigma):
    inv = np.linalg.inv(sigma)
    p = sigma.shape[0]
    return PrecisionEstimate(inv, np.zeros(p), np.zeros(p), sigma)


def identity_precision(p):
    return PrecisionEstimate(np.eye(p), np.zeros(p), np.zeros(p), np.eye(p))


def test_local_gradient_examples():
    np.testing.assert_array_equal(local_gradient(np.array([[1.0, 0.0]]), np.array([2.0]), square_loss(), np.zeros(2)), [-2, 0])
    np.testing.assert_array_equal(local_gradient(np.array([[1.0]]), np.array([0.0]), huber_loss(), np.array([10.0])), [1.345])
    x = np.array([[2.0, -4.0]])
    # residual x'b - y = +1
    np.testing.assert_array_equal(local_gradient(x, np.array([-1.0]), absolute_loss(), np.zeros(2)), 0.5 * x[0])


def test_local_h_examples():
    assert curvature_from_residuals(np.array([0.5, 2.0, -1.0]), huber_loss(), None, None) == pytest.approx(2 / 3)
    got = curvature_from_residuals(np.array([0.0, 0.05, 1.0]), absolute_loss(), biweight_kernel(), 0.1)
    assert got == pytest.approx(6.2377930, abs=1e-7)
    assert curvature_from_residuals(np.array([3.0, -7.0]), square_loss(), None, None) == 1.0
    # same value through the shard interface
    x = np.eye(3)
    assert local_h(x, np.array([-0.5, -2.0, 1.0]), huber_loss(), None, np.zeros(3), None) == pytest.approx(2 / 3)


def test_curvature_needs_kernel_for_jumps():
    with pytest.raises(ValueError):
        curvature_from_residuals(np.zeros(3), absolute_loss(), None, None)
    with pytest.raises(ValueError):
        curvature_from_residuals(np.zeros(3), absolute_loss(), biweight_kernel(), 0.0)


def one_machine(x, y, unlabeled=None):
    return Cluster((Machine(1, x, y, unlabeled),))


@given(st.integers(0, 1000))
def test_square_loss_one_round_is_least_squares(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((40, 5))
    y = x @ rng.standard_normal(5) + rng.standard_normal(40)
    cl = one_machine(x, y)
    sh = empirical_second_moment(x)
    beta0 = rng.standard_normal(5) * 10
    st1 = dissd_round(cl, initial_state(cl, beta0), exact_precision(sh), square_loss(), None, None, 0.0)
    ls = np.linalg.solve(sh, x.T @ y / 40)
    np.testing.assert_allclose(st1.beta_bar, ls, atol=1e-8)
    assert st1.h_hat == 1.0


def test_update_arithmetic():
    # one machine whose gradient at (1, 0) is (0.3, -0.2) under square loss with X = I
    x = np.eye(2)
    y = np.array([1.0, 0.0]) - 2 * np.array([0.3, -0.2])
    cl = one_machine(x, y)
    st1 = dissd_round(cl, initial_state(cl, np.array([1.0, 0.0])), identity_precision(2), square_loss(), None, None, 0.0)
    np.testing.assert_allclose(st1.beta_bar, [0.7, 0.2])


def test_degenerate_curvature():
    # every residual lies outside the kernel window, so the estimate is 0
    cl = one_machine(np.eye(2), np.array([50.0, 50.0]))
    with pytest.raises(DegenerateCurvatureError, match="degenerate curvature"):
        dissd_round(cl, initial_state(cl, np.zeros(2)), identity_precision(2), absolute_loss(), biweight_kernel(), 0.1, 0.0)


def test_degenerate_curvature_huber():
    cl = one_machine(np.eye(2), np.array([50.0, -50.0]))
    with pytest.raises(DegenerateCurvatureError):
        dissd_round(cl, initial_state(cl, np.zeros(2)), identity_precision(2), huber_loss(), None, None, 0.0)


def data(model="huber-linear", m=4, n=60, n_star=120, p=20, s=3, seed=0):
    return sample_cluster(make_ground_truth(p, s), model, m, n, n_star, seed=seed)


def test_t0_returns_initializer():
    d = data()
    beta0 = np.arange(20.0)
    run = run_dissd_mest(d, huber_loss(), DissdConfig(T=0, s=3), beta0=beta0)
    assert len(run.history) == 1
    np.testing.assert_array_equal(run.final.beta_hat, beta0)


@pytest.mark.parametrize("T", range(1, 11))
def test_single_precision_build(T):
    run = run_dissd_mest(data(), huber_loss(), DissdConfig(T=T, s=3))
    assert run.precision_builds == 1 and run.final.round == T


@pytest.mark.parametrize("init", ["local", "random", "pgd"])
def test_ledger_closed_form(init):
    m, p, T = 4, 20, 3
    cfg = DissdConfig(T=T, s=3, init=init, pgd_rounds=2)
    run = run_dissd_mest(data(m=m, p=p), huber_loss(), cfg)
    init_floats = 2 * 2 * m * p if init == "pgd" else 0
    assert run.init_floats == init_floats
    assert run.final.floats_sent == T * (m * (p + 1) + m * p) + init_floats
    for t, st in enumerate(run.history):
        assert st.floats_sent == t * (m * (p + 1) + m * p) + init_floats


def test_history_invariants():
    run = run_dissd_mest(data(), huber_loss(), DissdConfig(T=4, s=3))
    for st in run.history[1:]:
        np.testing.assert_array_equal(st.beta_hat, hard_threshold(st.beta_bar, st.tau))
        assert st.h_hat > 0


def test_absolute_loss_gets_default_kernel():
    run = run_dissd_mest(data("median-linear"), absolute_loss(), DissdConfig(T=2, s=3))
    assert np.isfinite(run.final.beta_bar).all() and run.final.h_hat > 0


def test_rejects_glm_link():
    with pytest.raises(TypeError):
        run_dissd_mest(data(), logistic_link())


@given(st.integers(0, 50))
def test_thread_count_does_not_change_bits(seed):
    d = data(seed=seed, m=6)
    a = run_dissd_mest(d, huber_loss(), DissdConfig(T=3, s=3), threads=1)
    b = run_dissd_mest(d, huber_loss(), DissdConfig(T=3, s=3), threads=8)
    for x, y in zip(a.history, b.history):
        assert x.beta_bar.tobytes() == y.beta_bar.tobytes()


def test_random_init_uses_its_own_stream():
    d = data()
    a = run_dissd_mest(d, huber_loss(), DissdConfig(T=0, s=3, init="random", seed=5))
    b = run_dissd_mest(d, huber_loss(), DissdConfig(T=0, s=3, init="random", seed=6))
    assert not np.array_equal(a.final.beta_hat, b.final.beta_hat)
    assert np.linalg.norm(a.final.beta_hat) == pytest.approx(1.0, abs=0.5)


def test_tau_rule_and_refresh():
    rate = math.sqrt(10 * math.log(500) / 100)
    want = 0.04 * (math.sqrt(math.log(500) / 10_000) + rate * 10 * math.sqrt(math.log(500) / 550) + rate**2)
    assert mest_tau(0.04, rate, 100, 100, 550, 500, 10) == pytest.approx(want)
    assert next_rate(0.02, 4) == pytest.approx(0.04)
    run = run_dissd_mest(data(), huber_loss(), DissdConfig(T=3, s=3, tau_refresh=True))
    taus = [st.tau for st in run.history[1:]]
    assert taus[0] > taus[1] > taus[2]
    fixed = run_dissd_mest(data(), huber_loss(), DissdConfig(T=3, s=3))
    assert len({st.tau for st in fixed.history[1:]}) == 1


def test_bandwidth_rule():
    d = data("median-linear")
    run = run_dissd_mest(d, absolute_loss(), DissdConfig(T=1, s=3, bandwidth=None, bandwidth_scale=0.2))
    assert run.final.h_hat > 0


def test_auto_lambda_scale():
    assert auto_lambda_scale(550, 500) == 0.75 and auto_lambda_scale(250, 500) == 0.75
    assert auto_lambda_scale(100, 500) == 0.9


def test_config_validation():
    with pytest.raises(ValueError):
        DissdConfig(T=-1)
    with pytest.raises(ValueError):
        DissdConfig(init="warm")
    with pytest.raises(ValueError):
        DissdConfig(tau_scale=-1.0)


def test_semi_supervised_precision_uses_unlabeled_rows():
    d = data(n_star=300)
    run = run_dissd_mest(d, huber_loss(), DissdConfig(T=1, s=3))
    np.testing.assert_allclose(run.precision.sigma_hat, empirical_second_moment(d.master_covariates()))
