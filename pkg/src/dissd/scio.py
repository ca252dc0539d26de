"""Row-wise l1-penalized precision-matrix estimation (SCIO).

Row ``l`` minimizes ``0.5 w' S w - w_l + lam |w|_1`` by cyclic coordinate
descent. The product ``S w`` is cached and updated after each coordinate
move; sweeps alternate between the active set and full passes until a full
pass changes nothing by more than ``tol``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from dissd.tensor_core import empirical_second_moment

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 10_000


class ScioConvergenceError(RuntimeError):
    def __init__(self, row: int, iterate: np.ndarray, residual: float):
        super().__init__(
            f"SCIO row {row} did not converge (max coordinate change {residual:.3g})"
        )
        self.row = row
        self.iterate = iterate
        self.residual = residual


@dataclass(frozen=True)
class PrecisionEstimate:
    """Row-sparse estimate of ``(E XX')^{-1}``.

    ``rows[l]`` is the solution for row ``l``; ``kkt_residuals[l]`` is
    ``|S w_l - e_l|_inf`` at that solution.
    """

    rows: np.ndarray
    lambdas: np.ndarray
    kkt_residuals: np.ndarray
    sigma_hat: np.ndarray

    @property
    def p(self) -> int:
        return self.rows.shape[0]

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Multiply the (unsymmetrized) estimate with a vector."""
        return self.rows @ v

    def diag(self) -> np.ndarray:
        return np.diag(self.rows).copy()


@numba.njit(cache=True)
def _pass(S, w, sw, l, lam, coords, ncoords):
    biggest = 0.0
    for k in range(ncoords):
        j = coords[k]
        sjj = S[j, j]
        old = w[j]
        target = (1.0 if j == l else 0.0) - (sw[j] - sjj * old)
        if target > lam:
            new = (target - lam) / sjj
        elif target < -lam:
            new = (target + lam) / sjj
        else:
            new = 0.0
        delta = new - old
        if delta != 0.0:
            w[j] = new
            for i in range(S.shape[0]):
                sw[i] += S[i, j] * delta
            if abs(delta) > biggest:
                biggest = abs(delta)
    return biggest


@numba.njit(cache=True)
def _solve_row(S, l, lam, tol, max_iter, w):
    p = S.shape[0]
    sw = S @ w
    all_coords = np.arange(p)
    active = np.empty(p, dtype=np.int64)
    sweeps = 0
    change = np.inf
    while sweeps < max_iter:
        change = _pass(S, w, sw, l, lam, all_coords, p)
        sweeps += 1
        if change < tol:
            return sweeps, change
        na = 0
        for j in range(p):
            if w[j] != 0.0:
                active[na] = j
                na += 1
        while sweeps < max_iter:
            inner = _pass(S, w, sw, l, lam, active, na)
            sweeps += 1
            if inner < tol:
                break
    return -1, change


@numba.njit(cache=True, parallel=True)
def _solve_all(S, lams, tol, max_iter, out, status, last):
    p = S.shape[0]
    for l in numba.prange(p):
        w = np.zeros(p)
        sweeps, change = _solve_row(S, l, lams[l], tol, max_iter, w)
        out[l, :] = w
        status[l] = sweeps
        last[l] = change


def _check_sigma(sigma_hat):
    s = np.ascontiguousarray(sigma_hat, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError("sigma_hat must be square")
    if np.any(np.diag(s) <= 0):
        raise ValueError("sigma_hat has a non-positive diagonal entry")
    return s


def scio_row(
    sigma_hat: np.ndarray,
    l: int,
    lam: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> np.ndarray:
    """Solve one SCIO row (``l`` is 0-based)."""
    s = _check_sigma(sigma_hat)
    if not 0 <= l < s.shape[0]:
        raise IndexError(f"row {l} out of range for p={s.shape[0]}")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    w = np.zeros(s.shape[0])
    sweeps, change = _solve_row(s, l, float(lam), float(tol), int(max_iter), w)
    if sweeps < 0:
        raise ScioConvergenceError(l, w, change)
    return w


def scio_from_sigma(
    sigma_hat: np.ndarray,
    lambdas,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> PrecisionEstimate:
    s = _check_sigma(sigma_hat)
    p = s.shape[0]
    lams = np.broadcast_to(np.asarray(lambdas, dtype=float), (p,)).copy()
    if np.any(lams < 0):
        raise ValueError("lambda must be nonnegative")
    rows = np.zeros((p, p))
    status = np.zeros(p, dtype=np.int64)
    last = np.zeros(p)
    _solve_all(s, lams, float(tol), int(max_iter), rows, status, last)
    bad = np.flatnonzero(status < 0)
    if bad.size:
        l = int(bad[0])
        raise ScioConvergenceError(l, rows[l].copy(), float(last[l]))
    kkt = np.max(np.abs(rows @ s - np.eye(p)), axis=1)
    return PrecisionEstimate(rows, lams, kkt, s)


def scio_lambda(p: int, n_rows: int, lambda_scale: float) -> float:
    return lambda_scale * math.sqrt(math.log(p) / n_rows)


def scio_full(
    covariates,
    lambda_scale: float = 0.5,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> PrecisionEstimate:
    """Estimate the precision matrix from all supplied covariate rows.

    Uses a uniform ``lambda = lambda_scale * sqrt(log p / n_rows)``.
    """
    x = np.asarray(covariates, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least 2 covariate rows")
    if lambda_scale <= 0:
        raise ValueError("lambda_scale must be positive")
    sigma_hat = empirical_second_moment(x)
    lam = scio_lambda(x.shape[1], x.shape[0], lambda_scale)
    return scio_from_sigma(sigma_hat, lam, tol, max_iter)
