"""Dense linear-algebra and thresholding primitives.

Vectors are 1-d float64 arrays and symmetric matrices are 2-d float64
arrays whose lower triangle is a mirror of the upper one.
"""

from __future__ import annotations

import numpy as np


def soft_threshold(x, lam):
    """Return ``sign(x) * max(|x| - lam, 0)``, elementwise for arrays."""
    if np.any(np.asarray(lam) < 0):
        raise ValueError("lambda must be nonnegative")
    if np.isscalar(x):
        return float(np.sign(x) * max(abs(x) - lam, 0.0))
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def hard_threshold(v, tau: float) -> np.ndarray:
    """Zero every entry with ``|v_l| < tau``; entries at exactly ``tau`` survive."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    v = np.asarray(v, dtype=float)
    return np.where(np.abs(v) >= tau, v, 0.0)


def mirror_upper(a: np.ndarray) -> np.ndarray:
    """Copy the upper triangle of ``a`` onto its lower triangle."""
    upper = np.triu(a)
    return upper + np.triu(a, 1).T


def empirical_second_moment(rows) -> np.ndarray:
    """Uncentered second-moment matrix ``(1/n) sum_i x_i x_i'``.

    Parameters
    ----------
    rows : array-like, shape (n, p)
        Covariate rows. No mean is subtracted.

    Returns
    -------
    ndarray, shape (p, p)
        Exactly symmetric matrix.
    """
    x = np.asarray(rows, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[0] == 0:
        raise ValueError("no rows")
    if not np.all(np.isfinite(x)):
        raise ValueError("rows contain non-finite entries")
    return mirror_upper(x.T @ x / x.shape[0])


def kahan_mean(values) -> np.ndarray | float:
    """Average a sequence of equally shaped arrays with compensated summation.

    Uses Neumaier's variant of Kahan summation, which also recovers the low
    bits when an addend is larger than the running total. Summation runs in
    sequence order, so the result depends only on the order of ``values``
    and never on how they were produced.
    """
    values = list(values)
    if not values:
        raise ValueError("nothing to average")
    total = np.zeros_like(np.asarray(values[0], dtype=float))
    comp = np.zeros_like(total)
    for v in values:
        v = np.asarray(v, dtype=float)
        t = total + v
        comp += np.where(np.abs(total) >= np.abs(v), (total - t) + v, (v - t) + total)
        total = t
    out = (total + comp) / len(values)
    return float(out) if out.ndim == 0 else out
