import numpy as np
import pytest

from dissd.cluster_sim import Cluster, Machine
from dissd.dissd_glm import dissd_glm_round, run_dissd_glm, weighted_gradient
from dissd.dissd_mest import DissdConfig, glm_tau, initial_state
from dissd.model_zoo import huber_loss, logistic_link
from dissd.scio import PrecisionEstimate
from dissd.synth_data import make_ground_truth, rng_stream, sample_cluster


def test_weighted_gradient_examples():
    g = logistic_link()
    np.testing.assert_allclose(weighted_gradient(np.array([[1.0, 0.0]]), np.array([1.0]), g, np.zeros(2)), [-2, 0])
    np.testing.assert_allclose(weighted_gradient(np.array([[1.0]]), np.array([0.0]), g, np.array([100.0])), [100.0], rtol=1e-12)


def test_weighted_gradient_mean_zero_at_truth():
    gt = make_ground_truth(10, 3)
    d = sample_cluster(gt, "logistic", 1, 100_000, 100_000, seed=4)
    assert np.linalg.norm(weighted_gradient(d.xs[0], d.ys[0], logistic_link(), gt.beta_star)) <= 0.05


def test_weighting_cancels_curvature_on_clip_free_batch():
    g = logistic_link()
    x = rng_stream(1, 1).standard_normal((500, 4)) * 0.5
    beta = np.array([0.3, -0.2, 0.1, 0.0])
    w = g.psi2(x @ beta)
    assert w.min() > g.psi2_floor
    m = (x * (w / g.weight(x @ beta))[:, None]).T @ x / 500
    np.testing.assert_allclose(m, x.T @ x / 500, atol=1e-15)


def test_round_arithmetic():
    # with X = 2I and n = 2 the weighted gradient is (psi'(eta) - y) / w(eta)
    g = logistic_link()
    x = 2 * np.eye(2)
    beta = np.ones(2)
    target = np.array([0.1, -0.1])
    eta = x @ beta
    y = g.psi1(eta) - target * g.weight(eta)
    cl = Cluster((Machine(1, x, y),))
    prec = PrecisionEstimate(np.eye(2), np.zeros(2), np.zeros(2), np.eye(2))
    np.testing.assert_allclose(weighted_gradient(x, y, g, beta), target)
    st = dissd_glm_round(cl, initial_state(cl, beta), prec, g, 0.0)
    np.testing.assert_allclose(st.beta_bar, [0.9, 1.1])
    assert np.isnan(st.h_hat)


def test_rejects_non_glm():
    d = sample_cluster(make_ground_truth(10, 2), "logistic", 2, 30, 30)
    with pytest.raises(TypeError):
        run_dissd_glm(d, huber_loss())


@pytest.mark.parametrize("T", [0, 1, 4, 10])
def test_single_build_and_ledger(T):
    m, p = 3, 10
    d = sample_cluster(make_ground_truth(p, 2), "logistic", m, 80, 150, seed=1)
    beta0 = np.full(p, 0.1)
    run = run_dissd_glm(d, logistic_link(), DissdConfig(T=T, s=2), beta0=beta0)
    assert run.precision_builds == 1
    assert run.final.floats_sent == T * 2 * m * p
    if T == 0:
        np.testing.assert_array_equal(run.final.beta_hat, beta0)


def test_glm_tau_has_extra_factor():
    rate = 0.3
    plain = glm_tau(1.0, rate, 100, 100, 250, 500, 10)
    want = np.sqrt(np.log(500) / 1e4) + rate * 10 * np.sqrt(np.log(500) / 250) + 10 * np.log(500) ** 2 * rate**2
    assert plain == pytest.approx(want)
