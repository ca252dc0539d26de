"""Multi-round distributed semi-supervised debiasing for M-estimation.

The master estimates the precision matrix once from all its covariates
(labeled and unlabeled). Each round it broadcasts the thresholded iterate,
collects every machine's gradient and curvature scalar, and applies

    beta_bar = beta_hat - (1/H) * Omega_hat @ mean_j grad_j

followed by hard thresholding.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from dissd.cluster_sim import Cluster, Machine
from dissd.model_zoo import GlmLink, Kernel, MEstLoss, biweight_kernel
from dissd.scio import PrecisionEstimate, scio_full
from dissd.sparse_init import distributed_pgd_init, lasso_lambda, prox_lasso
from dissd.synth_data import ClusterData, rng_stream
from dissd.tensor_core import hard_threshold

RANDOM_INIT_STREAM = 2**32 - 1
MIN_CURVATURE = 1e-8
MEST_TAU_SCALE = 0.04
# the GLM rate carries an extra s * log(p)^2 factor on its quadratic term
GLM_TAU_SCALE = 3e-4


class DegenerateCurvatureError(RuntimeError):
    pass


@dataclass(frozen=True)
class DissdConfig:
    """Tuning for both DISSD drivers.

    ``tau_scale`` multiplies the rate expression of the threshold level
    (``None`` picks the driver's default); with ``tau_refresh`` the initial
    rate is replaced every round by the one implied by the previous
    threshold (see :func:`next_rate`). ``lambda_scale=None`` selects
    :func:`auto_lambda_scale`. ``bandwidth`` is a fixed kernel bandwidth, or
    ``None`` for the rule ``bandwidth_scale * r_n``.
    """

    T: int = 5
    s: int = 10
    tau_scale: float | None = None
    tau_refresh: bool = False
    lambda_scale: float | None = None
    lambda0_scale: float = 0.5
    init: str = "local"
    pgd_rounds: int = 10
    pgd_lambda_scale: float = 0.5
    bandwidth: float | None = 0.1
    bandwidth_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.T < 0:
            raise ValueError("T must be >= 0")
        if self.init not in ("local", "random", "pgd"):
            raise ValueError(f"unknown init {self.init!r}; valid: local, random, pgd")
        if self.tau_scale is not None and self.tau_scale < 0:
            raise ValueError("tau_scale must be >= 0")


@dataclass(frozen=True)
class DissdState:
    """Iterate after ``round`` rounds.

    ``h_hat`` is the averaged curvature used to produce this iterate (NaN at
    round 0 and for GLM runs); ``floats_up``/``floats_down`` snapshot the
    ledger when the round finished.
    """

    beta_hat: np.ndarray
    beta_bar: np.ndarray
    round: int
    h_hat: float
    tau: float
    floats_up: int
    floats_down: int

    @property
    def floats_sent(self) -> int:
        return self.floats_up + self.floats_down


@dataclass
class DissdRun:
    history: list[DissdState]
    precision: PrecisionEstimate
    cluster: Cluster
    init_floats: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def final(self) -> DissdState:
        return self.history[-1]

    @property
    def precision_builds(self) -> int:
        return self.cluster.counters.precision_builds


# ---------------------------------------------------------------- worker side


def local_gradient(x: np.ndarray, y: np.ndarray, loss: MEstLoss, beta: np.ndarray) -> np.ndarray:
    """``(1/n) sum_i f'(x_i'beta - y_i) x_i`` over labeled rows."""
    r = x @ beta - y
    return x.T @ loss.first_deriv(r) / x.shape[0]


def curvature_from_residuals(r: np.ndarray, loss: MEstLoss, kernel: Kernel | None, bandwidth: float | None) -> float:
    """Smooth part ``mean f''(r)`` plus kernel-smoothed jump terms."""
    r = np.asarray(r, dtype=float)
    n = r.shape[0]
    value = float(np.mean(loss.second_deriv(r)))
    if loss.discontinuities:
        if kernel is None or bandwidth is None:
            raise ValueError(f"loss {loss.name!r} needs a kernel and bandwidth")
        if bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        for loc, gap in loss.discontinuities:
            value += gap / (n * bandwidth) * float(np.sum(kernel.eval((r - loc) / bandwidth)))
    return value


def local_h(x, y, loss: MEstLoss, kernel: Kernel | None, beta, bandwidth: float | None) -> float:
    """Local estimate of the curvature scalar ``h'(0)`` from labeled rows."""
    return curvature_from_residuals(np.asarray(x) @ beta - y, loss, kernel, bandwidth)


# ---------------------------------------------------------------- master side


def initial_rate(s: int, p: int, n: int) -> float:
    return math.sqrt(s * math.log(p) / n)


def mest_tau(tau_scale, rate, m, n, n_star, p, s) -> float:
    logp = math.log(p)
    return tau_scale * (math.sqrt(logp / (m * n)) + rate * s * math.sqrt(logp / n_star) + rate**2)


def glm_tau(tau_scale, rate, m, n, n_star, p, s) -> float:
    logp = math.log(p)
    return tau_scale * (
        math.sqrt(logp / (m * n)) + rate * s * math.sqrt(logp / n_star) + s * logp**2 * rate**2
    )


def next_rate(tau: float, s: int) -> float:
    """l2 rate implied by a sup-norm error of ``tau`` on an ``s``-sparse vector."""
    return math.sqrt(s) * tau


def auto_lambda_scale(n_rows: int, p: int) -> float:
    """SCIO penalty constant used when none is configured.

    Below ``p/2`` rows the sample second moment is far from full rank and
    the row problems approach the point where they stop being bounded
    below; the larger constant keeps ``I - Omega_hat Sigma`` contractive.
    """
    return 0.75 if 2 * n_rows >= p else 0.9


def master_precision(cluster: Cluster, lambda_scale: float | None) -> PrecisionEstimate:
    """Build the precision estimate from every covariate row on machine 1."""
    x = cluster.master.covariates()
    if lambda_scale is None:
        lambda_scale = auto_lambda_scale(x.shape[0], x.shape[1])
    cluster.counters.precision_builds += 1
    return scio_full(x, lambda_scale)


def as_cluster(data: Cluster | ClusterData, threads: int = 1) -> Cluster:
    return data if isinstance(data, Cluster) else Cluster.from_data(data, threads)


def initial_estimate(cluster: Cluster, loss, config: DissdConfig) -> np.ndarray:
    p, n, m = cluster.p, cluster.n, cluster.m
    if config.init == "local":
        mc = cluster.master
        return prox_lasso(mc.x, mc.y, loss, lasso_lambda(p, n, config.lambda0_scale))
    if config.init == "random":
        rng = rng_stream(config.seed, RANDOM_INIT_STREAM)
        return rng.standard_normal(p) / math.sqrt(p)
    lam = lasso_lambda(p, m * n, config.pgd_lambda_scale)
    return distributed_pgd_init(cluster, loss, lam, config.pgd_rounds)


def initial_state(cluster: Cluster, beta0: np.ndarray) -> DissdState:
    led = cluster.ledger
    beta0 = np.asarray(beta0, dtype=float)
    return DissdState(beta0, beta0.copy(), 0, math.nan, 0.0, led.floats_up, led.floats_down)


def dissd_round(
    cluster: Cluster,
    state: DissdState,
    precision: PrecisionEstimate,
    loss: MEstLoss,
    kernel: Kernel | None,
    bandwidth: float | None,
    tau: float,
) -> DissdState:
    if isinstance(loss, GlmLink):
        raise TypeError("dissd_round takes an M-estimation loss; use dissd_glm_round for GLMs")
    sent = cluster.broadcast(state.beta_hat)

    def work(mc: Machine):
        r = mc.x @ sent - mc.y
        grad = mc.x.T @ loss.first_deriv(r) / mc.n
        return grad, curvature_from_residuals(r, loss, kernel, bandwidth)

    replies = cluster.run_on_workers(work)
    # one message of p + 1 floats per machine
    packed = cluster.gather_reduce([np.append(g, h) for g, h in replies])
    grad, h_hat = packed[:-1], float(packed[-1])
    if abs(h_hat) < MIN_CURVATURE:
        raise DegenerateCurvatureError(f"degenerate curvature estimate {h_hat:.3g}")
    beta_bar = state.beta_hat - precision.apply(grad) / h_hat
    cluster.ledger.rounds += 1
    led = cluster.ledger
    return DissdState(
        hard_threshold(beta_bar, tau), beta_bar, state.round + 1, h_hat, tau, led.floats_up, led.floats_down
    )


def _run(cluster, loss, config, step: Callable, tau_rule: Callable, tau_scale: float, beta0=None) -> DissdRun:
    m, n, p = cluster.m, cluster.n, cluster.p
    n_star = cluster.master.covariates().shape[0]
    precision = master_precision(cluster, config.lambda_scale)
    if beta0 is None:
        beta0 = initial_estimate(cluster, loss, config)
    state = initial_state(cluster, beta0)
    init_floats = state.floats_sent
    history = [state]
    seconds = []
    rate = initial_rate(config.s, p, n)
    for _ in range(config.T):
        tau = tau_rule(tau_scale, rate, m, n, n_star, p, config.s)
        start = time.perf_counter()
        state = step(state, precision, tau, rate)
        seconds.append(time.perf_counter() - start)
        history.append(state)
        if config.tau_refresh:
            rate = next_rate(tau, config.s)
    return DissdRun(history, precision, cluster, init_floats, {"round_seconds": seconds})


def run_dissd_mest(
    data: Cluster | ClusterData,
    loss: MEstLoss,
    config: DissdConfig = DissdConfig(),
    kernel: Kernel | None = None,
    beta0: np.ndarray | None = None,
    threads: int = 1,
) -> DissdRun:
    """Run ``config.T`` rounds and return the whole iterate history.

    ``beta0`` overrides the configured initializer.
    """
    if isinstance(loss, GlmLink):
        raise TypeError("run_dissd_mest takes an M-estimation loss; use run_dissd_glm")
    cluster = as_cluster(data, threads)
    if loss.discontinuities and kernel is None:
        kernel = biweight_kernel()

    def step(state, precision, tau, rate):
        h = config.bandwidth if config.bandwidth is not None else config.bandwidth_scale * rate
        return dissd_round(cluster, state, precision, loss, kernel, h, tau)

    tau_scale = MEST_TAU_SCALE if config.tau_scale is None else config.tau_scale
    return _run(cluster, loss, config, step, mest_tau, tau_scale, beta0)


def with_overrides(config: DissdConfig, **kw) -> DissdConfig:
    return replace(config, **kw)
