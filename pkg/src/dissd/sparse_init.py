"""Initial estimators: l1-penalized local fits and early-stopped distributed PGD."""

from __future__ import annotations

import math

import numpy as np
import scipy.optimize
import scipy.sparse

from dissd.model_zoo import GlmLink, MEstLoss, empirical_risk
from dissd.tensor_core import soft_threshold

# Relative slack for the per-iteration objective check; ISTA with step <= 1/L
# is monotone in exact arithmetic, this only absorbs rounding.
_MONOTONE_RTOL = 1e-10


class DivergenceError(RuntimeError):
    pass


def lasso_lambda(p: int, n: int, scale: float) -> float:
    return scale * math.sqrt(math.log(p) / n)


def power_iteration(x: np.ndarray, iters: int = 50) -> float:
    """Largest eigenvalue of ``X'X/n`` by power iteration on the data operator."""
    n, p = x.shape
    v = np.ones(p) / math.sqrt(p)
    lam = 0.0
    for _ in range(iters):
        w = x.T @ (x @ v) / n
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v = w / lam
    return lam


def lipschitz_bound(x: np.ndarray, loss) -> float:
    """Gradient Lipschitz constant of the empirical loss on ``x``.

    The power-iteration estimate is a lower bound on the top eigenvalue, so
    it is cross-checked against an exact eigenvalue of the smaller Gram
    matrix and the larger of the two is used.
    """
    n, p = x.shape
    gram = x @ x.T / n if n <= p else x.T @ x / n
    top = max(power_iteration(x), float(np.linalg.eigvalsh(gram)[-1]))
    curvature = loss.curvature_bound if loss.curvature_bound > 0 else 1.0
    return top * curvature


def _objective(x, y, loss, beta, lam, shift=None):
    value, grad = empirical_risk(x, y, loss, beta)
    if shift is not None:
        value -= float(shift @ beta)
        grad = grad - shift
    return value + lam * float(np.abs(beta).sum()), grad


def ista(x, y, loss, lam, step=None, max_iter=20_000, tol=1e-7, beta0=None, check_monotone=True, shift=None):
    """Proximal gradient descent on ``L(beta) - <shift, beta> + lam |beta|_1``."""
    p = x.shape[1]
    if step is None:
        step = 1.0 / lipschitz_bound(x, loss)
    if shift is not None:
        shift = np.asarray(shift, dtype=float)
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)
    obj, grad = _objective(x, y, loss, beta, lam, shift)
    for _ in range(max_iter):
        new = soft_threshold(beta - step * grad, step * lam)
        new_obj, new_grad = _objective(x, y, loss, new, lam, shift)
        if not math.isfinite(new_obj):
            raise DivergenceError("diverged; reduce step")
        if check_monotone and new_obj > obj + _MONOTONE_RTOL * max(1.0, abs(obj)):
            raise DivergenceError(
                f"objective increased from {obj:.12g} to {new_obj:.12g}; reduce step"
            )
        change = float(np.max(np.abs(new - beta)))
        beta, obj, grad = new, new_obj, new_grad
        if change < tol:
            break
    return beta


def lad_lasso(x: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """Exact minimizer of ``(1/2n) sum |x_i'b - y_i| + lam |b|_1`` via an LP."""
    n, p = x.shape
    # variables: b+, b-, u+, u-  with  X(b+ - b-) - (u+ - u-) = y
    c = np.concatenate([np.full(2 * p, lam), np.full(2 * n, 0.5 / n)])
    eye = scipy.sparse.identity(n, format="csr")
    xs = scipy.sparse.csr_matrix(x)
    a_eq = scipy.sparse.hstack([xs, -xs, -eye, eye], format="csr")
    res = scipy.optimize.linprog(c, A_eq=a_eq, b_eq=y, bounds=(0, None), method="highs")
    if res.status != 0:
        raise DivergenceError(f"LAD-lasso LP failed: {res.message}")
    return res.x[:p] - res.x[p:2 * p]


def prox_lasso(
    x: np.ndarray,
    y: np.ndarray,
    loss: MEstLoss | GlmLink,
    lambda0: float,
    step: float | None = None,
    max_iter: int = 20_000,
    tol: float = 1e-7,
) -> np.ndarray:
    """l1-penalized fit of ``loss`` on one block of labeled rows.

    Smooth losses and GLM links run ISTA from zero with a monotone objective
    check on every iteration. The absolute-deviation loss has no gradient
    Lipschitz constant, so its penalized problem is solved exactly as a
    linear program instead.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[0] == 0:
        raise ValueError("empty shard")
    if lambda0 < 0:
        raise ValueError("lambda0 must be nonnegative")
    if isinstance(loss, MEstLoss) and not loss.is_smooth:
        return lad_lasso(x, y, lambda0)
    return ista(x, y, loss, lambda0, step, max_iter, tol)


def distributed_pgd_init(cluster, loss, lam: float, rounds: int, step: float | None = None) -> np.ndarray:
    """Early-stopped distributed proximal gradient descent from zero.

    Each round broadcasts the iterate, averages the machines' full local
    gradients on the master and takes one proximal step there.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if step is None:
        step = 1.0 / lipschitz_bound(cluster.master.x, loss)
    beta = np.zeros(cluster.p)
    for _ in range(rounds):
        sent = cluster.broadcast(beta)
        grads = cluster.run_on_workers(lambda mc: empirical_risk(mc.x, mc.y, loss, sent)[1])
        grad = cluster.gather_reduce(grads)
        beta = soft_threshold(beta - step * grad, step * lam)
        if not np.all(np.isfinite(beta)):
            raise DivergenceError("diverged; reduce step")
    return beta
