"""Generic sigma-point Kalman filter.

One recursion serves the cubature, Gauss-Hermite and unscented filters; the
:class:`~invspkf.points.PointRule` decides which. Beliefs may carry leading
batch axes, in which case every step runs on the whole stack at once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .belief import GaussianBelief
from .errors import NonFiniteState, NotPositiveSemidefinite, SingularInnovation
from .models import StateSpaceModel
from .numerics import cholesky_sqrt, symmetrize_psd
from .points import PointRule, transport

__all__ = [
    "GaussianBelief",
    "MeasurementUpdateReport",
    "time_update",
    "measurement_update",
    "forward_step",
    "weighted_moments",
    "kalman_gain",
]


@dataclass(frozen=True)
class MeasurementUpdateReport:
    predicted_obs: np.ndarray
    innovation_cov: np.ndarray
    cross_cov: np.ndarray
    gain: np.ndarray


def _swap(A):
    return np.swapaxes(A, -1, -2)


def weighted_moments(weights, X, residual=None):
    """Weighted mean and centered second moment of points ``X`` (``(..., N, d)``)."""
    mean = weights @ X
    D = X - mean[..., None, :]
    if residual is not None:
        D = residual(X, mean[..., None, :])
    cov = _swap(D) @ (weights[:, None] * D)
    return mean, D, cov


def kalman_gain(cross_cov, innovation_cov):
    """``cross_cov @ inv(innovation_cov)`` through a Cholesky solve."""
    try:
        L = cholesky_sqrt(innovation_cov)
    except NotPositiveSemidefinite as exc:
        raise SingularInnovation(str(exc)) from exc
    if np.any(np.abs(np.diagonal(L, axis1=-2, axis2=-1)) == 0.0):
        raise SingularInnovation("innovation covariance is singular")
    Z = np.linalg.solve(L, _swap(cross_cov))
    return _swap(np.linalg.solve(_swap(L), Z))


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteState("filter produced non-finite values")


def time_update(rule: PointRule, belief: GaussianBelief, f, Q) -> GaussianBelief:
    ps = rule.point_set()
    S = transport(ps, belief)
    S_star = f(S)
    mean, _, cov = weighted_moments(ps.weights, S_star)
    cov = symmetrize_psd(cov + Q)
    _check_finite(mean, cov)
    return GaussianBelief(mean, cov)


def measurement_update(rule: PointRule, predicted: GaussianBelief, y, h, R, residual=None):
    """Correct ``predicted`` with observation ``y``; returns ``(belief, report)``.

    Points are regenerated from ``predicted``. ``residual(a, b)`` replaces
    plain subtraction for observation differences (angle wrapping).
    """
    ps = rule.point_set()
    q = transport(ps, predicted)
    q_star = h(q)
    y_hat, Dy, Py = weighted_moments(ps.weights, q_star, residual)
    Py = Py + R
    Dx = q - predicted.mean[..., None, :]
    Pxy = _swap(Dx) @ (ps.weights[:, None] * Dy)
    K = kalman_gain(Pxy, Py)
    innov = residual(y, y_hat) if residual is not None else np.asarray(y) - y_hat
    mean = predicted.mean + (K @ innov[..., None])[..., 0]
    cov = symmetrize_psd(predicted.cov - K @ Py @ _swap(K))
    _check_finite(mean, cov)
    return GaussianBelief(mean, cov), MeasurementUpdateReport(y_hat, Py, Pxy, K)


def forward_step(rule: PointRule, belief: GaussianBelief, y, model: StateSpaceModel):
    """Time update through ``model.f`` followed by a measurement update through ``model.h``."""
    predicted = time_update(rule, belief, model.f, model.Q)
    return measurement_update(rule, predicted, y, model.h, model.R, model.residual_y)
