"""Posterior Cramer-Rao bounds, coupled attacker/defender runs and Monte-Carlo aggregation."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares

from . import errors
from .belief import GaussianBelief
from .config import ExperimentConfig
from .errors import NonFiniteState, NumericalError, SingularQ
from .forward import forward_step
from .inverse import forward_transition, inverse_step, make_inverse
from .models import simulate_trajectory
from .numerics import noise_factor, numeric_jacobian

log = logging.getLogger(__name__)

INVERSE_LINEARIZATION = (
    "defender estimate: F~ at xhathat_k with Sigma*_k and v=0, "
    "G at xhathat_{k+1}, Qbar = K R K^T with K from the forward step at (xhathat_k, Sigma*_k)"
)


# --------------------------------------------------------------------------
# Fisher information


def _swap(A):
    return np.swapaxes(A, -1, -2)


def _spd_inverse(A, name, reg=0.0):
    A = np.asarray(A, dtype=float)
    if A.ndim < 2:
        A = np.atleast_2d(A)
    if reg:
        A = A + reg * np.eye(A.shape[-1])
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise SingularQ(f"{name} is not positive definite") from exc
    Li = np.linalg.solve(L, np.broadcast_to(np.eye(A.shape[-1]), A.shape))
    return _swap(Li) @ Li


@dataclass(frozen=True)
class FisherInfo:
    """Information matrix ``J``; may be stacked along leading axes."""

    J: np.ndarray

    @classmethod
    def from_covariance(cls, cov) -> "FisherInfo":
        return cls(_spd_inverse(cov, "initial covariance"))

    def bound(self) -> np.ndarray:
        """The lower bound on the error covariance, ``inv(J)``."""
        return _spd_inverse(self.J, "J")


def rcrlb_forward_step(info: FisherInfo, F, H, Q, R, reg: float = 0.0) -> FisherInfo:
    """``J' = H^T R^-1 H - Q^-1 F (J + F^T Q^-1 F)^-1 F^T Q^-1 + Q^-1``.

    ``reg`` is added to the diagonal of ``Q`` before inversion. All inputs
    may be stacked along matching leading axes.
    """
    F, H = np.atleast_2d(F), np.atleast_2d(H)
    Qi = _spd_inverse(Q, "Q", reg)
    Ri = _spd_inverse(R, "R")
    B = Qi @ F
    A = np.atleast_2d(info.J) + _swap(F) @ B
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise SingularQ("J + F^T Q^-1 F is not positive definite") from exc
    Z = np.linalg.solve(L, _swap(B))
    Jn = _swap(H) @ Ri @ H - _swap(Z) @ Z + Qi
    return FisherInfo(0.5 * (Jn + _swap(Jn)))


def rcrlb_inverse_step(info: FisherInfo, F_tilde, G, Q_bar, Sigma_eps, reg: float = 1e-9) -> FisherInfo:
    """Same recursion for the inverse filter: ``(F~, G, Qbar, Sigma_eps)`` for ``(F, H, Q, R)``.

    ``Qbar`` is usually rank deficient, hence the default regularization.
    """
    return rcrlb_forward_step(info, F_tilde, G, Q_bar, Sigma_eps, reg=reg)


# --------------------------------------------------------------------------
# exponential boundedness diagnostic


@dataclass(frozen=True)
class BoundFit:
    eta: float
    lam: float
    nu: float


def check_exponential_bound(series, fit: BoundFit, b0: float | None = None):
    """Whether ``series[k] <= eta * b0 * lam**k + nu`` for every k; returns ``(ok, margin)``.

    ``b0`` defaults to ``series[0]``.
    """
    v = np.asarray(series, dtype=float)
    b0 = v[0] if b0 is None else b0
    k = np.arange(v.size)
    bound = fit.eta * b0 * fit.lam**k + fit.nu
    margin = float(np.min(bound - v))
    return bool(margin >= 0.0), margin


def fit_exponential_bound(series) -> BoundFit:
    """Fit ``eta * b0 * lam**k + nu`` to a positive, roughly decaying series.

    Starts from a log-linear fit over the decaying prefix with ``nu`` set to
    the mean of the final quartile and refines all three parameters by least
    squares in log space. ``eta`` is then inflated until the bound covers
    every point of the series, trading it against a slower rate when
    late points sit above the floor.
    """
    v = np.asarray(series, dtype=float)
    if v.size < 3 or np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise ValueError("series must have at least 3 positive finite entries")
    k = np.arange(v.size, dtype=float)
    b0 = v[0]
    vmax = v.max()
    tiny = 1e-12 * vmax

    nu = float(np.mean(v[-max(1, v.size // 4):]))
    d = v - nu
    prefix = np.argmax(d <= tiny) if np.any(d <= tiny) else v.size
    if prefix >= 2:
        slope, intercept = np.polyfit(k[:prefix], np.log(d[:prefix]), 1)
        lam = float(np.exp(slope))
        amp = float(np.exp(intercept))
    else:
        lam, amp = 0.5, max(v[0] - nu, tiny)
    lam = min(max(lam, 1e-6), 0.999)

    def resid(p):
        a, lm, n_ = p
        return np.log(a * lm**k + n_) - np.log(v)

    start = np.array([max(amp, tiny), lam, max(nu, tiny)])
    try:
        sol = least_squares(resid, start, bounds=([0.0, 0.0, 0.0], [np.inf, 1.0, np.inf]),
                            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
        if sol.success and np.sum(sol.fun**2) <= np.sum(resid(start) ** 2):
            amp, lam, nu = (float(x) for x in sol.x)
    except (ValueError, FloatingPointError):
        pass

    lam = min(max(lam, 1e-12), 1.0 - 1e-9)
    amp = max(amp, tiny)
    nu = max(nu, tiny)

    # Points above the floor late in the series cannot be covered by eta
    # alone without absurd values, so slower rates are also tried; the
    # envelope with the least total slack wins.
    best = None
    for lam_c in np.unique(np.concatenate([[lam], 1.0 - np.geomspace(1.0 - lam, 1e-6, 120)])):
        decay = lam_c**k
        over = v - nu
        need = over > 0
        if np.any(need & (decay <= 1e-280)):
            continue
        eta_c = amp / b0
        if np.any(need):
            eta_c = max(eta_c, float(np.max(over[need] / (b0 * decay[need]))))
        slack = float(np.sum(eta_c * b0 * decay + nu - v))
        if best is None or slack < best[0]:
            best = (slack, eta_c, float(lam_c))
    _, eta, lam = best
    eta *= 1.0 + 1e-9
    nu += 1e-12 * vmax
    return BoundFit(float(eta), float(lam), float(nu))


# --------------------------------------------------------------------------
# coupled runs


@dataclass
class RunMetrics:
    """Per-step quantities for one filter over one run (or their Monte-Carlo aggregate).

    ``sq_errors`` and ``rcrlb`` are restricted to the configured component
    group; ``rcrlb[k]`` is the group trace of ``inv(J_k)`` (a squared bound).
    """

    sq_errors: np.ndarray
    rcrlb: np.ndarray
    info: np.ndarray | None = None
    runtime: float = 0.0
    trace: dict = field(default_factory=dict)

    @property
    def rmse(self) -> np.ndarray:
        return np.sqrt(self.sq_errors)

    @property
    def time_avg_rmse(self) -> float:
        """Root of the squared error averaged over steps 1..K."""
        return float(np.sqrt(np.mean(self.sq_errors[1:])))

    @property
    def time_avg_rcrlb(self) -> float:
        return float(np.sqrt(np.mean(self.rcrlb[1:])))


def _group_trace(J_stack, group):
    inv = np.linalg.inv(J_stack)
    return np.sum(np.diagonal(inv, axis1=-2, axis2=-1)[..., group], axis=-1)


def _streams(seed, run_index):
    base = np.random.SeedSequence(seed, spawn_key=(run_index,))
    return [np.random.Generator(np.random.PCG64(s)) for s in base.spawn(3)]


def _run_setup(config: ExperimentConfig, model, run_index: int):
    """Initial conditions, true trajectory and action noise for one run."""
    n = model.n_x
    K = config.horizon
    rng_init, rng_traj, rng_act = _streams(config.seed, run_index)
    x0 = config.vector(config.x0, n, "x0")
    P0 = config.matrix(config.forward_cov, n, "forward.cov")
    if config.init_mode == "sampled":
        fmean0 = x0 + noise_factor(P0) @ rng_init.standard_normal(n)
    else:
        fmean0 = config.vector(config.forward_mean, n, "forward.mean")
    traj = simulate_trajectory(model, x0, K, rng_traj, noise=config.noise)
    eps = rng_act.standard_normal((K + 1, model.n_a)) @ noise_factor(model.Sigma_eps).T
    if not config.noise:
        eps[:] = 0.0
    return fmean0, traj, eps


def _run_batch(config: ExperimentConfig, indices, record: bool = False) -> dict:
    """Step several independent runs in lockstep.

    Every run keeps its own state; stacking only shares the Python overhead.
    Returns ``{run_index: (forward_metrics, inverse_metrics) or reason}``.
    A run that diverges is dropped from the stack and reported by reason.
    If the stacked step itself raises, the runs are redone one at a time so
    that only the offending run is lost.
    """
    t0 = time.perf_counter()
    model = config.build_model()
    n, n_y, n_a = model.n_x, model.n_y, model.n_a
    group = config.group(n)
    K = config.horizon
    out = {}

    x0 = config.vector(config.x0, n, "x0")
    P0 = config.matrix(config.forward_cov, n, "forward.cov")
    imean0 = x0 if config.inverse_mean is None else config.vector(config.inverse_mean, n, "inverse.mean")
    iP0 = P0 if config.inverse_cov is None else config.matrix(config.inverse_cov, n, "inverse.cov")
    sstar0 = P0 if config.sigma_star0 is None else config.matrix(config.sigma_star0, n, "inverse.sigma_star")
    template = make_inverse(model, config.assumed.rule(n), config.inverse.rule(n + n_y), imean0, iP0, sstar0)
    inner, outer = template.inner_rule, template.outer_rule
    true_rule = config.forward.rule(n)

    ids, setups = [], []
    for idx in indices:
        try:
            setups.append(_run_setup(config, model, idx))
            ids.append(idx)
        except NumericalError as exc:
            out[idx] = f"{type(exc).__name__}: {exc}"
    B = len(ids)
    if B == 0:
        return out
    xs = np.stack([st[1].states for st in setups])
    obs = np.stack([st[1].observations for st in setups])
    eps = np.stack([st[2] for st in setups])

    f_means = np.empty((B, K + 1, n))
    i_means = np.empty((B, K + 1, n))
    f_means[:, 0] = np.stack([st[0] for st in setups])
    i_means[:, 0] = imean0
    J = np.empty((B, K + 1, n, n))
    Jb = np.empty((B, K + 1, n, n))
    J[:, 0] = FisherInfo.from_covariance(P0).J
    Jb[:, 0] = FisherInfo.from_covariance(iP0).J
    actions = np.full((B, K + 1, n_a), np.nan)
    if record:
        f_cov = np.empty((B, K + 1, n))
        i_cov = np.empty((B, K + 1, n))
        s_cov = np.empty((B, K + 1, n))
        gain_norm = np.full((B, K + 1), np.nan)
        f_cov[:, 0], i_cov[:, 0], s_cov[:, 0] = np.diag(P0), np.diag(iP0), np.diag(sstar0)

    act = np.arange(B)  # rows still running
    fwd = GaussianBelief(f_means[:, 0].copy(), np.broadcast_to(P0, (B, n, n)).copy())
    inv = replace(template, estimate=GaussianBelief(np.broadcast_to(imean0, (B, n)).copy(),
                                                    np.broadcast_to(iP0, (B, n, n)).copy()),
                  sigma_star=np.broadcast_to(sstar0, (B, n, n)).copy())
    zeros_v = np.zeros((2 * n, n_y))
    Q_reg, R_cov = model.Q, model.R

    try:
        for k in range(K):
            x_next = xs[act, k + 1]
            fwd, rep = forward_step(true_rule, fwd, obs[act, k + 1], model)
            a = model.g(fwd.mean) + eps[act, k + 1]

            # inverse-bound ingredients linearized at the defender's current estimate
            xhh, sstar = inv.estimate.mean, inv.sigma_star
            _, irep = forward_step(inner, GaussianBelief(xhh, sstar), model.h(x_next), model)
            Q_bar = irep.gain @ R_cov @ _swap(irep.gain)
            F_t = numeric_jacobian(
                lambda X: forward_transition(inner, X, sstar[:, None], x_next[:, None, :], zeros_v, model),
                xhh, vectorized=True,
            )

            inv, _ = inverse_step(inv, a, x_next, model)
            new_f, new_i = fwd.mean, inv.estimate.mean
            bad = ~(np.all(np.abs(new_f) <= config.divergence_threshold, axis=-1)
                    & np.all(np.abs(new_i) <= config.divergence_threshold, axis=-1))

            f_means[act, k + 1] = new_f
            i_means[act, k + 1] = new_i
            actions[act, k + 1] = a
            J[act, k + 1] = rcrlb_forward_step(FisherInfo(J[act, k]), model.f_jac(xs[act, k]),
                                               model.h_jac(x_next), Q_reg, R_cov, reg=config.rcrlb_reg).J
            G = model.g_jac(new_i) if model.g_jac else numeric_jacobian(model.g, new_i, vectorized=True)
            Jb[act, k + 1] = rcrlb_inverse_step(FisherInfo(Jb[act, k]), F_t, G, Q_bar, model.Sigma_eps,
                                                reg=config.rcrlb_reg).J
            if record:
                f_cov[act, k + 1] = np.diagonal(fwd.cov, axis1=-2, axis2=-1)
                i_cov[act, k + 1] = np.diagonal(inv.estimate.cov, axis1=-2, axis2=-1)
                s_cov[act, k + 1] = np.diagonal(inv.sigma_star, axis1=-2, axis2=-1)
                gain_norm[act, k + 1] = np.linalg.norm(rep.gain, 2, axis=(-2, -1))

            if np.any(bad):
                for r in act[bad]:
                    out[ids[r]] = (f"NonFiniteState: estimate exceeded "
                                   f"{config.divergence_threshold:g} at step {k + 1}")
                keep = ~bad
                act = act[keep]
                if act.size == 0:
                    return out
                fwd = GaussianBelief(fwd.mean[keep], fwd.cov[keep])
                inv = replace(inv, estimate=GaussianBelief(inv.estimate.mean[keep], inv.estimate.cov[keep]),
                              sigma_star=inv.sigma_star[keep])
    except NumericalError as exc:
        if act.size == 1:
            out[ids[act[0]]] = f"{type(exc).__name__}: {exc}"
            return out
        for r in act:
            out.update(_run_batch(config, [ids[r]], record))
        return out

    runtime = (time.perf_counter() - t0) / B
    f_err = f_means[act] - xs[act]
    i_err = i_means[act] - f_means[act]
    f_sq = np.sum(f_err[..., group] ** 2, axis=-1)
    i_sq = np.sum(i_err[..., group] ** 2, axis=-1)
    f_b = _group_trace(J[act], group)
    i_b = _group_trace(Jb[act], group)
    for j, r in enumerate(act):
        fm = RunMetrics(f_sq[j], f_b[j], J[r], runtime)
        im = RunMetrics(i_sq[j], i_b[j], Jb[r], runtime)
        if record:
            fm.trace = {"mean": f_means[r], "cov_diag": f_cov[r], "gain_norm": gain_norm[r],
                        "states": xs[r], "observations": obs[r], "actions": actions[r]}
            im.trace = {"mean": i_means[r], "cov_diag": i_cov[r], "sigma_star_diag": s_cov[r]}
        out[ids[r]] = (fm, im)
    return out


def run_coupled_experiment(config: ExperimentConfig, run_index: int = 0, record: bool = False):
    """One attacker/defender run; returns ``(forward_metrics, inverse_metrics)``.

    The true state is simulated, the attacker filters its observations and
    acts on its estimate, and the defender filters those actions knowing the
    true state. Bounds follow the true trajectory for the forward filter and
    the defender's own estimates for the inverse filter. Raises
    :class:`~invspkf.errors.NumericalError` if the run fails or diverges.
    """
    res = _run_batch(config, [run_index], record)[run_index]
    if isinstance(res, str):
        name, _, msg = res.partition(": ")
        exc_type = getattr(errors, name, NumericalError)
        raise exc_type(msg)
    return res


# --------------------------------------------------------------------------
# Monte Carlo


@dataclass
class Aggregate:
    """Monte-Carlo summary for one filter.

    ``mse[k]`` is the mean squared group error over kept runs and ``mse_se``
    its standard error; ``rcrlb[k]`` the group trace of the inverse of the
    run-averaged information matrix.
    """

    mse: np.ndarray
    mse_se: np.ndarray
    rcrlb: np.ndarray

    @property
    def rmse(self):
        return np.sqrt(self.mse)

    @property
    def bound(self):
        return np.sqrt(self.rcrlb)

    @property
    def running_rmse(self):
        """Root of the squared error averaged over steps 1..k (0 at k = 0)."""
        return _running_root_mean(self.mse)

    @property
    def running_rcrlb(self):
        return _running_root_mean(self.rcrlb)

    @property
    def time_avg_rmse(self) -> float:
        return float(np.sqrt(np.mean(self.mse[1:])))

    @property
    def time_avg_rcrlb(self) -> float:
        return float(np.sqrt(np.mean(self.rcrlb[1:])))

    @property
    def gap(self) -> float:
        return self.time_avg_rmse - self.time_avg_rcrlb


def _running_root_mean(x):
    out = np.zeros_like(x)
    out[1:] = np.sqrt(np.cumsum(x[1:]) / np.arange(1, x.size))
    return out


def _aggregate(metrics: list, group) -> Aggregate:
    sq = np.stack([m.sq_errors for m in metrics])
    info = np.mean(np.stack([m.info for m in metrics]), axis=0)
    runs = sq.shape[0]
    se = sq.std(axis=0, ddof=1) / np.sqrt(runs) if runs > 1 else np.zeros(sq.shape[1])
    return Aggregate(sq.mean(axis=0), se, _group_trace(info, group))


@dataclass
class MonteCarloResult:
    config: ExperimentConfig
    forward: Aggregate
    inverse: Aggregate
    runs: list  # run indices kept, ascending
    excluded: list  # (run index, reason)
    runtime: float = 0.0
    per_run: list = field(default_factory=list)  # (forward RunMetrics, inverse RunMetrics), ascending index


BATCH_SIZE = 50


def _one_batch(args):
    config, chunk = args
    return _run_batch(config, chunk)


def monte_carlo(config: ExperimentConfig, runs: int | None = None, seed: int | None = None,
                workers: int | None = None, run_indices=None) -> MonteCarloResult:
    """Independent coupled runs, reduced in run-index order.

    Run ``i`` draws from a stream derived from ``(seed, i)`` only. Runs are
    sorted and cut into fixed-size chunks before any scheduling, so the
    aggregate depends on neither worker count nor the order indices were
    given in. Runs that fail numerically or diverge are excluded and listed.
    """
    t0 = time.perf_counter()
    if runs is not None or seed is not None:
        config = config.replace(runs=runs if runs is not None else config.runs,
                                seed=seed if seed is not None else config.seed)
    indices = sorted(set(range(config.runs) if run_indices is None else (int(i) for i in run_indices)))
    workers = workers or config.workers
    jobs = [(config, indices[i:i + BATCH_SIZE]) for i in range(0, len(indices), BATCH_SIZE)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_one_batch, jobs))
    else:
        parts = [_one_batch(j) for j in jobs]
    merged = {}
    for part in parts:
        merged.update(part)
    results = [(i, None, merged[i]) if isinstance(merged[i], str) else (i, merged[i], None)
               for i in indices]
    results.sort(key=lambda r: r[0])
    kept = [(i, res) for i, res, err in results if err is None]
    excluded = [(i, err) for i, _, err in results if err is not None]
    for i, err in excluded:
        log.warning("run %d excluded: %s", i, err)
    if not kept:
        raise NonFiniteState("every Monte-Carlo run diverged")
    group = config.group(config.build_model().n_x)
    fwd = _aggregate([r[0] for _, r in kept], group)
    inv = _aggregate([r[1] for _, r in kept], group)
    return MonteCarloResult(config, fwd, inv, [i for i, _ in kept], excluded,
                            time.perf_counter() - t0, [r for _, r in kept])
