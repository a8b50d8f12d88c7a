"""Reference computations written independently of the package.

Nothing here imports from ``invspkf``; these are the textbook formulas the
library is checked against.
"""
import math

import numpy as np


def double_factorial(p):
    return math.prod(range(p, 0, -2)) if p > 0 else 1


def gaussian_moment(p):
    """E[z**p] for z ~ N(0, 1)."""
    return 0.0 if p % 2 else float(double_factorial(p - 1))


def kalman_predict(m, P, F, Q):
    return F @ m, F @ P @ F.T + Q


def kalman_update(m, P, y, H, R):
    S = H @ P @ H.T + R
    K = P @ H.T @ np.linalg.inv(S)
    return m + K @ (y - H @ m), P - K @ S @ K.T, K


def kalman_filter(F, H, Q, R, m0, P0, ys):
    """Means and covariances after each observation in ``ys``."""
    m, P = np.asarray(m0, float), np.asarray(P0, float)
    means, covs = [], []
    for y in ys:
        m, P = kalman_predict(m, P, F, Q)
        m, P, _ = kalman_update(m, P, y, H, R)
        means.append(m)
        covs.append(P)
    return np.array(means), np.array(covs)


def riccati_step(P, F, H, Q, R):
    Pp = F @ P @ F.T + Q
    S = H @ Pp @ H.T + R
    K = Pp @ H.T @ np.linalg.inv(S)
    return Pp - K @ S @ K.T, K


def riccati_fixed_point(F, H, Q, R, P0, iters=5000):
    P = np.asarray(P0, float)
    for _ in range(iters):
        P, _ = riccati_step(P, F, H, Q, R)
    return P


def linear_inverse_kf(F, H, G, Q, R, Sigma_eps, xhathat0, Sigma_bar0, sigma_star0, actions, states):
    """Inverse Kalman filter for a linear system, written out by hand.

    The attacker's update is ``xhat' = (I - K H) F xhat + K H x' + K v`` with
    ``K`` from the Riccati recursion on ``sigma_star``; the defender runs an
    ordinary Kalman filter on that linear transition and ``a = G xhat + eps``.
    ``actions[k]`` and ``states[k]`` are a_{k+1} and x_{k+1}.
    """
    n = F.shape[0]
    I = np.eye(n)
    m, S_bar, S_star = np.asarray(xhathat0, float), np.asarray(Sigma_bar0, float), np.asarray(sigma_star0, float)
    means, covs = [], []
    for a, x_next in zip(actions, states):
        S_next, K = riccati_step(S_star, F, H, Q, R)
        A = (I - K @ H) @ F
        m_pred = A @ m + K @ H @ x_next
        P_pred = A @ S_bar @ A.T + K @ R @ K.T
        m, S_bar, _ = kalman_update(m_pred, P_pred, a, G, Sigma_eps)
        S_star = S_next
        means.append(m)
        covs.append(S_bar)
    return np.array(means), np.array(covs)


def lorenz_jacobian(x, dt=0.01, r1=10.0, r2=28.0, r3=8.0 / 3.0):
    x1, x2, x3 = x
    return np.array([
        [1 - dt * r1, dt * r1, 0.0],
        [dt * (r2 - x3), 1 - dt, -dt * x1],
        [dt * x2, dt * x1, 1 - dt * r3],
    ])


def scalar_information_form(J, F, H, Q, R):
    """Scalar posterior information by the matrix-inversion lemma."""
    return H * H / R + 1.0 / (Q + F * F / J)
