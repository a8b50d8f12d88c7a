"""State-space models: the generic three-map system and the two benchmarks.

All maps and their Jacobians are vectorized over leading axes: ``f`` takes
``(..., n_x)`` to ``(..., n_x)`` and ``f_jac`` to ``(..., n_x, n_x)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NonFiniteState
from .numerics import noise_factor

SMALL_TURN = 1e-6


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


@dataclass(frozen=True)
class StateSpaceModel:
    """``x' = f(x) + w``, ``y = h(x) + v``, ``a = g(xhat) + eps``.

    ``angular_y``/``angular_a`` list observation components that are angles;
    their residuals are wrapped to (-pi, pi].
    """

    name: str
    n_x: int
    n_y: int
    n_a: int
    f: Callable
    h: Callable
    g: Callable
    Q: np.ndarray
    R: np.ndarray
    Sigma_eps: np.ndarray
    f_jac: Callable | None = None
    h_jac: Callable | None = None
    g_jac: Callable | None = None
    angular_y: tuple = ()
    angular_a: tuple = ()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, size in (("Q", self.n_x), ("R", self.n_y), ("Sigma_eps", self.n_a)):
            M = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if M.shape != (size, size):
                raise ValueError(f"{name} must be {size}x{size}, got {M.shape}")
            if not np.allclose(M, M.T, rtol=0, atol=1e-12 * max(1.0, np.abs(M).max())):
                raise ValueError(f"{name} is not symmetric")
            if np.linalg.eigvalsh(M).min() < -1e-12 * max(1.0, np.abs(M).max()):
                raise ValueError(f"{name} is not positive semidefinite")
            M.setflags(write=False)
            object.__setattr__(self, name, M)

    def residual_y(self, y, yhat):
        d = np.asarray(y) - yhat
        if self.angular_y:
            d = d.copy()
            idx = list(self.angular_y)
            d[..., idx] = wrap_angle(d[..., idx])
        return d

    def residual_a(self, a, ahat):
        d = np.asarray(a) - ahat
        if self.angular_a:
            d = d.copy()
            idx = list(self.angular_a)
            d[..., idx] = wrap_angle(d[..., idx])
        return d


# --------------------------------------------------------------------------
# coordinated turn


@dataclass(frozen=True)
class CoordinatedTurnParams:
    T: float = 1.0
    Omega0: float = math.radians(3.0)
    q_pos: float = 0.1
    q_turn: float = 1.75e-4
    r_range: float = 100.0
    r_bearing: float = math.radians(1.0) ** 2

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("sampling interval T must be positive")
        for name in ("q_pos", "q_turn", "r_range", "r_bearing"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def _turn_coefficients(omega, T):
    """sin(wT)/w and (1 - cos(wT))/w, with a series near w = 0."""
    omega = np.asarray(omega, dtype=float)
    wt = omega * T
    small = np.abs(wt) < SMALL_TURN
    safe = np.where(small, 1.0, omega)
    a = np.where(small, T * (1.0 - wt**2 / 6.0), np.sin(wt) / safe)
    b = np.where(small, T * (wt / 2.0 - wt**3 / 24.0), 2.0 * np.sin(0.5 * wt) ** 2 / safe)
    return a, b


def _ct_transition(x, T):
    x = np.asarray(x, dtype=float)
    px, vx, py, vy, om = (x[..., i] for i in range(5))
    a, b = _turn_coefficients(om, T)
    c = np.cos(om * T)
    s = np.sin(om * T)
    return np.stack(
        [px + a * vx - b * vy, c * vx - s * vy, py + b * vx + a * vy, s * vx + c * vy, om],
        axis=-1,
    )


def _ct_transition_jacobian(x, T):
    x = np.asarray(x, dtype=float)
    vx, vy, om = x[..., 1], x[..., 3], x[..., 4]
    a, b = _turn_coefficients(om, T)
    c, s = np.cos(om * T), np.sin(om * T)
    small = np.abs(om * T) < SMALL_TURN
    safe = np.where(small, 1.0, om)
    da = np.where(small, -T**3 * om / 3.0, (T * c - a) / safe)
    db = np.where(small, T**2 / 2.0 - T**4 * om**2 / 8.0, (T * s - b) / safe)
    dc, ds = -T * s, T * c
    J = np.zeros(x.shape[:-1] + (5, 5))
    J[..., 0, 0] = J[..., 2, 2] = J[..., 4, 4] = 1.0
    J[..., 0, 1], J[..., 0, 3], J[..., 0, 4] = a, -b, da * vx - db * vy
    J[..., 1, 1], J[..., 1, 3], J[..., 1, 4] = c, -s, dc * vx - ds * vy
    J[..., 2, 1], J[..., 2, 3], J[..., 2, 4] = b, a, db * vx + da * vy
    J[..., 3, 1], J[..., 3, 3], J[..., 3, 4] = s, c, ds * vx + dc * vy
    return J


def range_bearing(x):
    x = np.asarray(x, dtype=float)
    px, py = x[..., 0], x[..., 2]
    return np.stack([np.hypot(px, py), np.arctan2(py, px)], axis=-1)


def range_bearing_jacobian(x):
    x = np.asarray(x, dtype=float)
    px, py = x[..., 0], x[..., 2]
    r2 = px * px + py * py
    r = np.sqrt(r2)
    J = np.zeros(x.shape[:-1] + (2, 5))
    J[..., 0, 0], J[..., 0, 2] = px / r, py / r
    J[..., 1, 0], J[..., 1, 2] = -py / r2, px / r2
    return J


def coordinated_turn_Q(params: CoordinatedTurnParams) -> np.ndarray:
    T = params.T
    block = params.q_pos * np.array([[T**3 / 3.0, T**2 / 2.0], [T**2 / 2.0, T]])
    Q = np.zeros((5, 5))
    Q[0:2, 0:2] = block
    Q[2:4, 2:4] = block
    Q[4, 4] = params.q_turn * T
    return Q


def coordinated_turn_model(params: CoordinatedTurnParams | None = None) -> StateSpaceModel:
    """Planar turn at unknown constant rate, observed by range and bearing.

    State ``[px, vx, py, vy, omega]``. The attacker's action is the same
    range-bearing map applied to its estimate, with ``Sigma_eps = R``.
    """
    p = params or CoordinatedTurnParams()
    T = p.T
    R = np.diag([p.r_range, p.r_bearing])
    return StateSpaceModel(
        name="tracking",
        n_x=5,
        n_y=2,
        n_a=2,
        f=lambda x: _ct_transition(x, T),
        h=range_bearing,
        g=range_bearing,
        Q=coordinated_turn_Q(p),
        R=R,
        Sigma_eps=R.copy(),
        f_jac=lambda x: _ct_transition_jacobian(x, T),
        h_jac=range_bearing_jacobian,
        g_jac=range_bearing_jacobian,
        angular_y=(1,),
        angular_a=(1,),
        params=dict(vars(p)),
    )


# --------------------------------------------------------------------------
# Lorenz


@dataclass(frozen=True)
class LorenzParams:
    dt: float = 0.01
    r1: float = 10.0
    r2: float = 28.0
    r3: float = 8.0 / 3.0
    process_gain: float = 0.5
    obs_gain: float = 0.065
    action_gain: float = 0.1

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")


def lorenz_drift(x, p: LorenzParams):
    x = np.asarray(x, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    dt = p.dt
    return np.stack(
        [
            x1 + dt * p.r1 * (x2 - x1),
            x2 + dt * (p.r2 * x1 - x2 - x1 * x3),
            x3 + dt * (-p.r3 * x3 + x1 * x2),
        ],
        axis=-1,
    )


def lorenz_drift_jacobian(x, p: LorenzParams):
    x = np.asarray(x, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    dt = p.dt
    J = np.zeros(x.shape[:-1] + (3, 3))
    J[..., 0, 0], J[..., 0, 1] = 1.0 - dt * p.r1, dt * p.r1
    J[..., 1, 0], J[..., 1, 1], J[..., 1, 2] = dt * (p.r2 - x3), 1.0 - dt, -dt * x1
    J[..., 2, 0], J[..., 2, 1], J[..., 2, 2] = dt * x2, dt * x1, 1.0 - dt * p.r3
    return J


def _offset_distance(x, offset, dt):
    d = np.asarray(x, dtype=float) - offset
    return dt * np.sqrt(np.sum(d * d, axis=-1, keepdims=True))


def _offset_distance_jacobian(x, offset, dt):
    d = np.asarray(x, dtype=float) - offset
    return (dt * d / np.linalg.norm(d, axis=-1, keepdims=True))[..., None, :]


def lorenz_model(params: LorenzParams | None = None) -> StateSpaceModel:
    """Euler-discretized stochastic Lorenz system with scalar distance sensors."""
    p = params or LorenzParams()
    y_off = np.array([0.5, 0.0, 0.0])
    a_off = np.array([0.0, 0.5, 0.0])
    Q = np.zeros((3, 3))
    Q[2, 2] = p.process_gain**2 * p.dt
    return StateSpaceModel(
        name="lorenz",
        n_x=3,
        n_y=1,
        n_a=1,
        f=lambda x: lorenz_drift(x, p),
        h=lambda x: _offset_distance(x, y_off, p.dt),
        g=lambda x: _offset_distance(x, a_off, p.dt),
        Q=Q,
        R=np.array([[p.obs_gain**2 * p.dt]]),
        Sigma_eps=np.array([[p.action_gain**2 * p.dt]]),
        f_jac=lambda x: lorenz_drift_jacobian(x, p),
        h_jac=lambda x: _offset_distance_jacobian(x, y_off, p.dt),
        g_jac=lambda x: _offset_distance_jacobian(x, a_off, p.dt),
        params=dict(vars(p)),
    )


# --------------------------------------------------------------------------
# linear


def linear_model(F, H, G, Q, R, Sigma_eps, name="linear") -> StateSpaceModel:
    """All three maps linear; useful as a closed-form oracle."""
    F, H, G = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (F, H, G))
    for M in (F, H, G):
        M.setflags(write=False)
    return StateSpaceModel(
        name=name,
        n_x=F.shape[0],
        n_y=H.shape[0],
        n_a=G.shape[0],
        f=lambda x: np.asarray(x, dtype=float) @ F.T,
        h=lambda x: np.asarray(x, dtype=float) @ H.T,
        g=lambda x: np.asarray(x, dtype=float) @ G.T,
        Q=np.atleast_2d(Q),
        R=np.atleast_2d(R),
        Sigma_eps=np.atleast_2d(Sigma_eps),
        f_jac=lambda x: np.broadcast_to(F, np.shape(x)[:-1] + F.shape),
        h_jac=lambda x: np.broadcast_to(H, np.shape(x)[:-1] + H.shape),
        g_jac=lambda x: np.broadcast_to(G, np.shape(x)[:-1] + G.shape),
        params={"F": F.tolist(), "H": H.tolist(), "G": G.tolist()},
    )


# --------------------------------------------------------------------------
# simulation


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray  # (K+1, n_x), states[0] = x0
    observations: np.ndarray  # (K+1, n_y); observations[0] is drawn but never filtered
    actions: np.ndarray | None = None  # (K+1, n_a), set by the coupled run
    seed: object = None


def _as_generator(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def simulate_trajectory(model: StateSpaceModel, x0, steps: int, seed=None, noise: bool = True) -> Trajectory:
    """Draw ``x_{k+1} = f(x_k) + w_k`` and ``y_k = h(x_k) + v_k`` for k = 0..steps.

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``; process
    noise is drawn for all steps before observation noise so that the state
    path does not depend on the observation model.
    """
    rng = _as_generator(seed)
    x0 = np.asarray(x0, dtype=float).reshape(model.n_x)
    Sq = noise_factor(model.Q)
    Sr = noise_factor(model.R)
    W = rng.standard_normal((steps, model.n_x)) @ Sq.T
    V = rng.standard_normal((steps + 1, model.n_y)) @ Sr.T
    if not noise:
        W[:] = 0.0
        V[:] = 0.0
    X = np.empty((steps + 1, model.n_x))
    X[0] = x0
    for k in range(steps):
        X[k + 1] = model.f(X[k]) + W[k]
        if not np.all(np.isfinite(X[k + 1])):
            raise NonFiniteState(f"trajectory diverged at step {k + 1}")
    Y = model.h(X) + V
    return Trajectory(X, Y, None, seed if not isinstance(seed, np.random.Generator) else None)
