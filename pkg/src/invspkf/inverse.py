"""Inverse sigma-point filter: estimate the attacker's estimate from its actions.

The attacker's filter step is itself the state transition of the inverse
filter. Its measurement noise enters non-additively (through the gain), so
the inverse filter works on the augmented state ``[xhat; v]`` whose noise
block carries the attacker's measurement covariance ``R``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .belief import GaussianBelief
from .errors import PointBudgetExceeded
from .forward import MeasurementUpdateReport, forward_step, kalman_gain, weighted_moments
from .models import StateSpaceModel
from .numerics import symmetrize_psd
from .points import DEFAULT_POINT_BUDGET, PointRule, transport


@dataclass(frozen=True)
class InverseFilterState:
    estimate: GaussianBelief  # belief over the attacker's estimate
    sigma_star: np.ndarray  # replicated forward covariance
    inner_rule: PointRule  # the forward filter the defender assumes
    outer_rule: PointRule  # dimension n_x + n_y

    def __post_init__(self):
        n_x = self.estimate.dim
        if self.inner_rule.dim != n_x:
            raise ValueError("inner rule dimension must equal n_x")
        if self.outer_rule.dim <= n_x:
            raise ValueError("outer rule dimension must be n_x + n_y")


def augmented_belief(estimate: GaussianBelief, R) -> GaussianBelief:
    """Mean ``[xhathat; 0]`` and block-diagonal covariance ``diag(Sigma_bar, R)``."""
    R = np.atleast_2d(R)
    n_x, n_y = estimate.dim, R.shape[0]
    batch = estimate.mean.shape[:-1]
    cov = np.zeros(batch + (n_x + n_y, n_x + n_y))
    cov[..., :n_x, :n_x] = estimate.cov
    cov[..., n_x:, n_x:] = R
    mean = np.concatenate([estimate.mean, np.zeros(batch + (n_y,))], axis=-1)
    return GaussianBelief(mean, cov)


def forward_transition(inner_rule: PointRule, xhat_hyp, sigma_star, x_next, v, model: StateSpaceModel):
    """The attacker's next estimate given its current one, as a state map.

    One forward filter step from belief ``(xhat_hyp, sigma_star)`` with the
    synthetic observation ``h(x_next) + v``. ``xhat_hyp`` and ``v`` may be
    stacked along a leading axis; the gain is recomputed for each row.
    """
    xhat_hyp = np.asarray(xhat_hyp, dtype=float)
    v = np.asarray(v, dtype=float)
    y = model.h(np.asarray(x_next, dtype=float)) + v
    belief = GaussianBelief(xhat_hyp, sigma_star)
    posterior, _ = forward_step(inner_rule, belief, y, model)
    return posterior.mean


def sigma_star_update(inner_rule: PointRule, xhat_prev, sigma_star_prev, model: StateSpaceModel) -> np.ndarray:
    """Next forward posterior covariance, seeded at the defender's previous estimate.

    The covariance recursion never touches the observation value, so any
    ``y`` gives the same result.
    """
    xhat_prev = np.asarray(xhat_prev, dtype=float)
    belief = GaussianBelief(xhat_prev, sigma_star_prev)
    posterior, _ = forward_step(inner_rule, belief, np.zeros(xhat_prev.shape[:-1] + (model.n_y,)), model)
    return posterior.cov


def inverse_step(state: InverseFilterState, a, x_next, model: StateSpaceModel):
    """One inverse-filter recursion given the observed action ``a`` and true ``x_next``.

    Returns ``(new_state, report)``; ``report`` describes the measurement
    update through ``g``. The state may carry leading batch axes (independent
    runs), with ``a`` and ``x_next`` stacked to match.
    """
    n_x = model.n_x
    ps = state.outer_rule.point_set()
    z = augmented_belief(state.estimate, model.R)
    pts = transport(ps, z)  # generated once per recursion
    x_next = np.asarray(x_next, dtype=float)
    s_star = forward_transition(
        state.inner_rule, pts[..., :n_x], state.sigma_star[..., None, :, :],
        x_next[..., None, :], pts[..., n_x:], model,
    )

    # no additive process-noise term: it is inside the transition
    x_pred, Dx, P_pred = weighted_moments(ps.weights, s_star)
    P_pred = symmetrize_psd(P_pred)

    a_star = model.g(s_star)
    a_hat, Da, Pa = weighted_moments(ps.weights, a_star, model.residual_a)
    Pa = Pa + model.Sigma_eps
    Pxa = np.swapaxes(Dx, -1, -2) @ (ps.weights[:, None] * Da)
    K = kalman_gain(Pxa, Pa)
    innov = model.residual_a(np.asarray(a, dtype=float), a_hat)
    mean = x_pred + (K @ innov[..., None])[..., 0]
    cov = symmetrize_psd(P_pred - K @ Pa @ np.swapaxes(K, -1, -2))

    sigma_star = sigma_star_update(state.inner_rule, state.estimate.mean, state.sigma_star, model)
    new_state = replace(state, estimate=GaussianBelief(mean, cov), sigma_star=sigma_star)
    return new_state, MeasurementUpdateReport(a_hat, Pa, Pxa, K)


def _make(model, inner, outer, mean0, cov0, sigma_star0, budget):
    n_z = model.n_x + model.n_y
    outer = outer.with_dim(n_z)
    inner = inner.with_dim(model.n_x)
    if outer.n_points > budget:
        raise PointBudgetExceeded(f"inverse rule needs {outer.n_points} points (budget {budget})")
    outer.point_set(budget)
    inner.point_set(budget)
    estimate = GaussianBelief(np.asarray(mean0, dtype=float), cov0)
    sigma_star = np.array(estimate.cov if sigma_star0 is None else sigma_star0, dtype=float)
    return InverseFilterState(estimate, sigma_star, inner, outer)


def make_ickf(model, mean0, cov0, sigma_star0=None, inner: PointRule | None = None,
              budget=DEFAULT_POINT_BUDGET) -> InverseFilterState:
    """Inverse cubature filter; assumes a forward CKF unless ``inner`` says otherwise."""
    inner = inner or PointRule.cubature(model.n_x)
    return _make(model, inner, PointRule.cubature(model.n_x + model.n_y), mean0, cov0, sigma_star0, budget)


def make_iqkf(model, m_bar, assumed_m, mean0, cov0, sigma_star0=None,
              budget=DEFAULT_POINT_BUDGET) -> InverseFilterState:
    """``m_bar``-point inverse quadrature filter assuming an ``assumed_m``-point forward QKF."""
    return _make(
        model,
        PointRule.gauss_hermite(assumed_m, model.n_x),
        PointRule.gauss_hermite(m_bar, model.n_x + model.n_y),
        mean0, cov0, sigma_star0, budget,
    )


def make_iukf(model, kappa_bar, assumed_kappa, mean0, cov0, sigma_star0=None,
              budget=DEFAULT_POINT_BUDGET) -> InverseFilterState:
    return _make(
        model,
        PointRule.unscented(model.n_x, assumed_kappa),
        PointRule.unscented(model.n_x + model.n_y, kappa_bar),
        mean0, cov0, sigma_star0, budget,
    )


def make_inverse(model, inner: PointRule, outer: PointRule, mean0, cov0, sigma_star0=None,
                 budget=DEFAULT_POINT_BUDGET) -> InverseFilterState:
    """Generic factory: any assumed forward rule with any inverse rule."""
    return _make(model, inner, outer, mean0, cov0, sigma_star0, budget)
