"""Comparison estimators run on the same simulated cluster.

* one-shot averaging of locally debiased lasso fits,
* communication-efficient surrogate likelihood (CSL) rounds,
* the lasso on pooled data and on machine 1 alone.
"""

from __future__ import annotations

import math

import numpy as np

from dissd.cluster_sim import Cluster, Machine
from dissd.dissd_glm import weighted_gradient
from dissd.dissd_mest import (
    MIN_CURVATURE,
    DegenerateCurvatureError,
    as_cluster,
    auto_lambda_scale,
    local_gradient,
    local_h,
)
from dissd.model_zoo import GlmLink, Kernel, MEstLoss, biweight_kernel, empirical_risk
from dissd.scio import ScioConvergenceError, scio_full
from dissd.sparse_init import ista, lasso_lambda, lipschitz_bound, prox_lasso
from dissd.synth_data import ClusterData


class LocalFitError(RuntimeError):
    def __init__(self, machine: int, cause: Exception):
        super().__init__(f"machine {machine}: {cause}")
        self.machine = machine


def oneshot_avg_debias(
    data: Cluster | ClusterData,
    loss: MEstLoss | GlmLink,
    lambda0_scale: float = 0.5,
    lambda_scale: float | None = None,
    kernel: Kernel | None = None,
    bandwidth: float = 0.1,
) -> np.ndarray:
    """Average of per-machine debiased lasso estimates.

    Every machine fits the lasso and a precision estimate on its own ``n``
    rows, so the cluster performs ``m`` precision builds. Only the final
    ``p``-vector of each machine is communicated.
    """
    cluster = as_cluster(data)
    p, n = cluster.p, cluster.n
    lam0 = lasso_lambda(p, n, lambda0_scale)
    scale = auto_lambda_scale(n, p) if lambda_scale is None else lambda_scale
    glm = isinstance(loss, GlmLink)
    if not glm and loss.discontinuities and kernel is None:
        kernel = biweight_kernel()

    def work(mc: Machine):
        try:
            omega = scio_full(mc.x, scale)
        except ScioConvergenceError as exc:
            raise LocalFitError(mc.id, exc) from exc
        beta = prox_lasso(mc.x, mc.y, loss, lam0)
        if glm:
            return beta - omega.apply(weighted_gradient(mc.x, mc.y, loss, beta))
        h = local_h(mc.x, mc.y, loss, kernel, beta, bandwidth)
        if abs(h) < MIN_CURVATURE:
            raise LocalFitError(mc.id, DegenerateCurvatureError(f"curvature {h:.3g}"))
        return beta - omega.apply(local_gradient(mc.x, mc.y, loss, beta)) / h

    estimates = cluster.run_on_workers(work)
    cluster.counters.precision_builds += cluster.m
    return np.asarray(cluster.gather_reduce(estimates))


def csl_lambda(p: int, m: int, n: int, scale: float = 0.5) -> float:
    return scale * math.sqrt(math.log(p) / (m * n))


def _require_smooth(loss):
    if isinstance(loss, MEstLoss) and not loss.is_smooth:
        raise ValueError("CSL requires smooth loss")


def csl_surrogate(mc: Machine, loss, shift: np.ndarray, lam: float, beta: np.ndarray) -> float:
    """Value of ``L_1(beta) - <shift, beta> + lam |beta|_1`` on the master."""
    value, _ = empirical_risk(mc.x, mc.y, loss, beta)
    return value - float(shift @ beta) + lam * float(np.abs(beta).sum())


def csl_iter(
    data: Cluster | ClusterData,
    loss: MEstLoss | GlmLink,
    T: int,
    lam: float | None = None,
    beta0: np.ndarray | None = None,
    lambda0_scale: float = 0.5,
    tol: float = 1e-7,
):
    """Yield the CSL iterates ``beta_0, ..., beta_T`` one round at a time.

    Round ``t`` minimizes ``L_1(b) - <grad L_1(beta_t) - mean_j grad L_j(beta_t), b> + lam |b|_1``
    on the master by proximal gradient descent started at ``beta_t``. The
    default initializer is the lasso on machine 1.
    """
    _require_smooth(loss)
    if T < 0:
        raise ValueError("T must be >= 0")
    cluster = as_cluster(data)
    p, n, m = cluster.p, cluster.n, cluster.m
    master = cluster.master
    if lam is None:
        lam = csl_lambda(p, m, n)
    if beta0 is None:
        beta0 = prox_lasso(master.x, master.y, loss, lasso_lambda(p, n, lambda0_scale))
    beta = np.asarray(beta0, dtype=float)
    step = 1.0 / lipschitz_bound(master.x, loss)
    yield beta
    for _ in range(T):
        sent = cluster.broadcast(beta)
        grads = cluster.run_on_workers(lambda mc: empirical_risk(mc.x, mc.y, loss, sent)[1])
        global_grad = cluster.gather_reduce(grads)
        shift = grads[0] - global_grad
        beta = ista(master.x, master.y, loss, lam, step, tol=tol, beta0=beta, shift=shift)
        cluster.ledger.rounds += 1
        yield beta


def csl_path(data, loss, T: int, lam: float | None = None, beta0=None, **kw) -> list[np.ndarray]:
    return list(csl_iter(data, loss, T, lam, beta0, **kw))


def csl(data, loss, T: int, lam: float | None = None, beta0=None) -> np.ndarray:
    return csl_path(data, loss, T, lam, beta0)[-1]


def pooled_lasso(data: Cluster | ClusterData, loss, lam: float | None = None, scale: float = 0.5) -> np.ndarray:
    """Lasso on all labeled rows gathered in one place."""
    cluster = as_cluster(data)
    x = np.vstack([mc.x for mc in cluster.machines])
    y = np.concatenate([mc.y for mc in cluster.machines])
    if lam is None:
        lam = lasso_lambda(cluster.p, x.shape[0], scale)
    return prox_lasso(x, y, loss, lam)


def local_lasso(data: Cluster | ClusterData, loss, lam: float | None = None, scale: float = 0.5) -> np.ndarray:
    """Lasso on machine 1's labeled rows only."""
    mc = as_cluster(data).master
    if lam is None:
        lam = lasso_lambda(mc.x.shape[1], mc.n, scale)
    return prox_lasso(mc.x, mc.y, loss, lam)
