"""Loss, link and kernel descriptors.

All callables are vectorized over numpy arrays. Residuals follow the
convention ``r = X'beta - Y``; every shipped loss has an even second
derivative, so the sign convention does not matter for curvature.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Fn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MEstLoss:
    """An M-estimation loss ``f`` with its (a.e.) derivatives.

    ``discontinuities`` lists ``(x_k, gap_k)`` pairs where ``f'`` jumps by
    ``gap_k = f'(x_k+) - f'(x_k-)``.
    """

    name: str
    value: Fn
    first_deriv: Fn
    second_deriv: Fn
    discontinuities: tuple[tuple[float, float], ...] = ()
    # Upper bound on f'' used to pick proximal step sizes.
    curvature_bound: float = 1.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.is_smooth and self.discontinuities:
            raise ValueError("a smooth loss cannot have discontinuities")

    @property
    def is_smooth(self) -> bool:
        return not self.discontinuities and self.params.get("smooth", True)


@dataclass(frozen=True)
class GlmLink:
    """Cumulant function ``psi`` of a GLM and its first three derivatives."""

    name: str
    psi: Fn
    psi1: Fn
    psi2: Fn
    psi3: Fn
    psi2_floor: float = 0.01
    curvature_bound: float = 0.25

    def __post_init__(self):
        if self.psi2_floor <= 0:
            raise ValueError("psi2_floor must be positive")

    def weight(self, eta: np.ndarray) -> np.ndarray:
        """``psi''(eta)`` clipped from below at ``psi2_floor``."""
        return np.maximum(self.psi2(eta), self.psi2_floor)


@dataclass(frozen=True)
class Kernel:
    name: str
    eval: Fn
    support_radius: float = 1.0


def huber_loss(delta: float = 1.345) -> MEstLoss:
    if not delta > 0:
        raise ValueError("delta must be positive")

    def value(x):
        a = np.abs(x)
        return np.where(a <= delta, 0.5 * x * x, delta * a - 0.5 * delta * delta)

    def d1(x):
        return np.clip(x, -delta, delta)

    def d2(x):
        return (np.abs(x) <= delta).astype(float)

    return MEstLoss("huber", value, d1, d2, (), 1.0, {"delta": delta})


def absolute_loss() -> MEstLoss:
    """``f(x) = |x|/2`` with ``f'(x) = 1/2 - I(x <= 0)`` and ``f'' = 0``."""

    def value(x):
        return 0.5 * np.abs(x)

    def d1(x):
        return 0.5 - (np.asarray(x) <= 0).astype(float)

    def d2(x):
        return np.zeros_like(np.asarray(x, dtype=float))

    return MEstLoss("absolute", value, d1, d2, ((0.0, 1.0),), 0.0, {"smooth": False})


def square_loss() -> MEstLoss:
    def value(x):
        return 0.5 * np.asarray(x) ** 2

    def d1(x):
        return np.asarray(x, dtype=float)

    def d2(x):
        return np.ones_like(np.asarray(x, dtype=float))

    return MEstLoss("square", value, d1, d2, (), 1.0)


def _psi(x):
    x = np.asarray(x, dtype=float)
    # log(1 + e^x) = max(x, 0) + log1p(e^{-|x|}) never overflows
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _psi1(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _psi2(x):
    e = np.exp(-np.abs(np.asarray(x, dtype=float)))
    return e / (1.0 + e) ** 2


def _psi3(x):
    x = np.asarray(x, dtype=float)
    p = _psi1(x)
    return _psi2(x) * (1.0 - 2.0 * p)


def logistic_link(psi2_floor: float = 0.01) -> GlmLink:
    return GlmLink("logistic", _psi, _psi1, _psi2, _psi3, psi2_floor)


_BIWEIGHT = np.array([-315.0, 0.0, 735.0, 0.0, -525.0, 0.0, 105.0]) / 64.0


def biweight_kernel() -> Kernel:
    """Sixth-order polynomial kernel supported on ``[-1, 1]``."""

    def k(x):
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) <= 1.0, np.polyval(_BIWEIGHT, x), 0.0)

    return Kernel("biweight", k)


LOSSES = {
    "huber": huber_loss,
    "absolute": absolute_loss,
    "square": square_loss,
}


def empirical_risk(x: np.ndarray, y: np.ndarray, loss, beta: np.ndarray):
    """Average loss and its gradient on one block of labeled rows.

    Works for both ``MEstLoss`` (``f(X'b - Y)``) and ``GlmLink``
    (``-Y X'b + psi(X'b)``). Non-smooth losses return a subgradient.
    """
    eta = x @ beta
    n = x.shape[0]
    if isinstance(loss, GlmLink):
        value = float(np.mean(loss.psi(eta) - y * eta))
        grad = x.T @ (loss.psi1(eta) - y) / n
    else:
        r = eta - y
        value = float(np.mean(loss.value(r)))
        grad = x.T @ loss.first_deriv(r) / n
    return value, grad
