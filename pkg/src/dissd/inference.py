"""Plug-in asymptotic variances and coordinatewise confidence intervals.

Intervals are centered at the dense (un-thresholded) debiased iterate and
have half-width ``z * sigma_l / sqrt(m n)``.
"""

from __future__ import annotations

import math

import numpy as np

from dissd.dissd_mest import DissdRun
from dissd.model_zoo import GlmLink, MEstLoss
from dissd.scio import PrecisionEstimate

# Acklam's rational approximation to the standard normal quantile
# (relative error < 1.15e-9), polished below with one Halley step.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _acklam(q: float) -> float:
    if q < _P_LOW:
        t = math.sqrt(-2 * math.log(q))
        num = ((((_C[0] * t + _C[1]) * t + _C[2]) * t + _C[3]) * t + _C[4]) * t + _C[5]
        return num / ((((_D[0] * t + _D[1]) * t + _D[2]) * t + _D[3]) * t + 1)
    if q > 1 - _P_LOW:
        return -_acklam(1 - q)
    u = q - 0.5
    r = u * u
    num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * u
    return num / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1)


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2))


def normal_quantile(q: float) -> float:
    """Inverse of the standard normal CDF on ``(0, 1)``."""
    if not 0 < q < 1:
        raise ValueError(f"quantile level must lie in (0, 1), got {q}")
    x = _acklam(q)
    e = normal_cdf(x) - q
    u = e * math.sqrt(2 * math.pi) * math.exp(x * x / 2)
    return x - u / (1 + x * u / 2)


def precision_diagonal(precision: PrecisionEstimate, l: int, debiased: bool = False) -> float:
    """Entry ``Omega_ll`` of the estimate.

    The penalized row shrinks its diagonal toward zero.  With ``debiased``
    the one-step correction ``omega_ll + lam_l * |omega_l|_1`` is returned,
    which is ``2 omega_ll - omega_l' S omega_l`` at an exact row optimum.
    """
    d = float(precision.rows[l, l])
    if debiased:
        d += float(precision.lambdas[l] * np.abs(precision.rows[l]).sum())
    return d


def sigma_mest(l: int, precision: PrecisionEstimate, h_hat: float, residual_grads,
               debiased_diag: bool = False) -> float:
    """``sigma_l^2 = mean(f'(r)^2) / h^2 * Omega_ll`` (returned as a variance).

    ``residual_grads`` are the values ``f'(r_i)`` pooled over machines.
    """
    if abs(h_hat) < 1e-8:
        raise ValueError(f"curvature estimate {h_hat:.3g} is too close to zero")
    g = np.asarray(residual_grads, dtype=float)
    return float(np.mean(g * g)) / h_hat**2 * precision_diagonal(precision, l, debiased_diag)


def sigma_glm(l: int, precision: PrecisionEstimate, x: np.ndarray, beta: np.ndarray, link: GlmLink) -> float:
    """``omega_l' [(1/N) sum x x' / max(psi''(x'beta), floor)] omega_l``."""
    x = np.asarray(x, dtype=float)
    v = x @ precision.rows[l]
    w = link.weight(x @ beta)
    return float(np.mean(v * v / w))


def confidence_interval(center: float, variance: float, n_total: int, level: float = 0.95) -> tuple[float, float]:
    if not 0 < level < 1:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    half = normal_quantile((1 + level) / 2) * math.sqrt(variance / n_total)
    return center - half, center + half


def pooled_score_moment(run: DissdRun, loss: MEstLoss) -> float:
    """Average ``f'(r)^2`` at the final iterate, one scalar per machine."""
    cluster = run.cluster
    beta = cluster.broadcast(run.final.beta_hat)
    replies = cluster.run_on_workers(
        lambda mc: float(np.mean(loss.first_deriv(mc.x @ beta - mc.y) ** 2))
    )
    return cluster.gather_scalars(replies)


def mest_variances(run: DissdRun, loss: MEstLoss, coords=None, debiased_diag: bool = False) -> np.ndarray:
    if run.final.round == 0:
        raise ValueError("need at least one completed round")
    p = run.precision.p
    coords = range(p) if coords is None else coords
    score2 = pooled_score_moment(run, loss)
    h = run.final.h_hat
    # sqrt keeps sigma_mest's "pooled f'" contract with a single scalar
    grads = np.array([math.sqrt(score2)])
    return np.array([sigma_mest(l, run.precision, h, grads, debiased_diag) for l in coords])


def glm_variances(run: DissdRun, link: GlmLink, coords=None) -> np.ndarray:
    if run.final.round == 0:
        raise ValueError("need at least one completed round")
    p = run.precision.p
    coords = list(range(p) if coords is None else coords)
    beta = run.final.beta_hat
    # each machine ships its partial quadratic forms, one float per coordinate
    cluster = run.cluster
    sent = cluster.broadcast(beta)
    rows = run.precision.rows[coords]

    def work(mc):
        v = mc.x @ rows.T
        return np.mean(v * v / link.weight(mc.x @ sent)[:, None], axis=0)

    return np.atleast_1d(cluster.gather_reduce(cluster.run_on_workers(work)))


def coordinate_intervals(run: DissdRun, loss, coords=None, level: float = 0.95,
                         debiased_diag: bool = False) -> np.ndarray:
    """Intervals for ``coords`` as an array of ``(lo, hi)`` rows.

    ``debiased_diag`` only affects M-estimation runs; see ``precision_diagonal``.
    """
    p = run.precision.p
    coords = list(range(p) if coords is None else coords)
    if isinstance(loss, GlmLink):
        var = glm_variances(run, loss, coords)
    else:
        var = mest_variances(run, loss, coords, debiased_diag)
    cluster = run.cluster
    n_total = cluster.m * cluster.n
    center = run.final.beta_bar
    return np.array([confidence_interval(center[l], v, n_total, level) for l, v in zip(coords, var)])
