import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dissd.scio import ScioConvergenceError, scio_from_sigma, scio_full, scio_lambda, scio_row
from dissd.synth_data import make_ground_truth, rng_stream
from dissd.tensor_core import empirical_second_moment


def kkt_violation(s, w, l, lam):
    g = s @ w
    g[l] -= 1
    nz = w != 0
    on = np.abs(g[nz] + lam * np.sign(w[nz]))
    off = np.abs(g[~nz]) - lam
    return max(on.max(initial=0), off.max(initial=0))


def test_identity_separates():
    np.testing.assert_allclose(scio_row(np.eye(3), 1, 0.1), [0, 0.9, 0], atol=1e-12)


def test_unpenalized_row_is_inverse_column():
    s = np.array([[1.0, 0.5], [0.5, 1.0]])
    np.testing.assert_allclose(scio_row(s, 0, 0.0, tol=1e-12), [4 / 3, -2 / 3], atol=1e-9)
    x = rng_stream(0, 1).standard_normal((200, 6))
    sh = empirical_second_moment(x)
    inv = np.linalg.inv(sh)
    for l in range(6):
        np.testing.assert_allclose(scio_row(sh, l, 0.0, tol=1e-12), inv[:, l], atol=1e-6)


def test_row_errors():
    with pytest.raises(IndexError):
        scio_row(np.eye(3), 3, 0.1)
    with pytest.raises(ValueError):
        scio_row(np.eye(3), 0, -1.0)
    with pytest.raises(ValueError):
        scio_row(np.zeros((2, 2)), 0, 0.1)


def test_nonconvergence_reports_row_and_iterate():
    # a singular quadratic with no penalty is unbounded below along the null space
    s = np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(ScioConvergenceError) as info:
        scio_row(s, 0, 0.0, max_iter=50)
    assert info.value.row == 0 and info.value.iterate.shape == (2,)


@given(st.integers(0, 10_000), st.floats(0.05, 1.0))
def test_kkt_box_holds(seed, scale):
    x = rng_stream(seed, 1).standard_normal((60, 12))
    est = scio_full(x, scale)
    lam = scio_lambda(12, 60, scale)
    assert np.all(est.kkt_residuals <= est.lambdas + 1e-6)
    for l in range(12):
        assert kkt_violation(est.sigma_hat, est.rows[l], l, lam) <= 1e-6


def test_small_lambda_recovers_inverse():
    x = rng_stream(3, 1).standard_normal((400, 20))
    sh = empirical_second_moment(x)
    est = scio_from_sigma(sh, 0.0, tol=1e-10)
    assert np.max(np.abs(est.rows - np.linalg.inv(sh))) <= 1e-5


def test_identity_design_recovery():
    x = rng_stream(5, 1).standard_normal((5000, 50))
    est = scio_full(x, 0.2)
    assert np.max(np.abs(est.rows - np.eye(50))) <= 0.1


def test_error_decreases_with_more_rows():
    gt = make_ground_truth(100, 5)
    errs = []
    for rows in (150, 550, 2000):
        vals = []
        for rep in range(5):
            x = rng_stream(rep, rows).standard_normal((rows, 100)) @ gt.chol.T
            est = scio_full(x, 0.75)
            vals.append(np.abs(est.rows - gt.omega).sum(axis=1).max())
        errs.append(np.mean(vals))
    assert errs[0] > errs[1] > errs[2]


def test_rank_one_input():
    x = np.tile([[1.0, 2.0, -1.0]], (4, 1))
    # below lambda = 2/3 row 0 decreases without bound along (2, -1, 0)
    with pytest.raises(ScioConvergenceError):
        scio_full(x, 0.5, max_iter=200)
    est = scio_full(x, 2.0)
    assert np.all(est.kkt_residuals <= est.lambdas + 1e-6)


def test_row_order_invariance():
    x = rng_stream(9, 1).standard_normal((80, 10))
    a = scio_full(x, 0.5)
    b = scio_full(x[::-1], 0.5)
    np.testing.assert_allclose(a.rows, b.rows, atol=1e-6)


def test_precision_estimate_helpers():
    est = scio_from_sigma(np.eye(3), 0.1)
    assert est.p == 3
    np.testing.assert_allclose(est.apply(np.ones(3)), [0.9, 0.9, 0.9])
    np.testing.assert_allclose(est.diag(), [0.9] * 3)
    with pytest.raises(ValueError):
        scio_full(np.ones((1, 3)))
