"""The ten acceptance criteria, each at its stated tolerance.

Every test records a one-line verdict that is printed in the
"acceptance criteria" section at the end of the pytest run.
"""
import itertools
import time

import numpy as np
import pytest

from invspkf.cli import main
from invspkf.config import load_config
from invspkf.evaluation import (
    FisherInfo,
    check_exponential_bound,
    fit_exponential_bound,
    monte_carlo,
    rcrlb_forward_step,
    run_coupled_experiment,
)
from invspkf.forward import GaussianBelief, forward_step
from invspkf.inverse import inverse_step, make_inverse
from invspkf.models import StateSpaceModel, linear_model, simulate_trajectory
from invspkf.points import PointRule, cubature_rule, gauss_hermite_1d

import oracles

BENCHMARKS = {
    "lorenz_iqkf_q": "lorenz.cfg",
    "lorenz_iukf_u": "lorenz_iukf_u.cfg",
    "tracking_ickf_c": "tracking.cfg",
    "tracking_ickf_u": "tracking_ickf_u.cfg",
}


class _Cache:
    def __init__(self):
        self.results, self.seconds = {}, {}

    def get(self, key):
        if key not in self.results:
            t0 = time.perf_counter()
            self.results[key] = monte_carlo(load_config(BENCHMARKS[key]))
            self.seconds[key] = time.perf_counter() - t0
        return self.results[key]


@pytest.fixture(scope="module")
def mc():
    return _Cache()


def _max_trace_diff(a, b, key):
    return float(np.max(np.abs(a.trace[key] - b.trace[key])))


# 1 -----------------------------------------------------------------------------


def test_criterion_01_unscented_zero_is_cubature(record_criterion):
    t0 = time.perf_counter()
    base = load_config("lorenz.cfg").replace(horizon=100, runs=1)
    ckf = base.replace(forward=base.forward.parse("ckf"), assumed=base.forward.parse("ckf"),
                       inverse=base.forward.parse("ckf"))
    ukf = base.replace(forward=base.forward.parse("ukf:0"), assumed=base.forward.parse("ukf:0"),
                       inverse=base.forward.parse("ukf:0"))
    cf, ci = run_coupled_experiment(ckf, 0, record=True)
    uf, ui = run_coupled_experiment(ukf, 0, record=True)
    elapsed = time.perf_counter() - t0
    fwd = _max_trace_diff(cf, uf, "mean")
    inv = _max_trace_diff(ci, ui, "mean")
    ok = fwd <= 1e-10 and inv <= 1e-10 and elapsed < 5.0
    record_criterion(1, ok, f"forward max diff {fwd:.1e}, inverse max diff {inv:.1e}, {elapsed:.2f} s")
    assert ok


# 2 -----------------------------------------------------------------------------


def _scalar_nonlinear():
    base = linear_model([[1.0]], [[1.0]], [[1.0]], [[0.1]], [[0.2]], [[0.3]], name="scalar")
    return StateSpaceModel(**{**base.__dict__,
                              "f": lambda x: 0.9 * x + 0.2 * np.sin(x),
                              "h": lambda x: x + 0.05 * x**2,
                              "g": lambda x: x + 0.1 * x**3,
                              "f_jac": None, "h_jac": None, "g_jac": None})


def test_criterion_02_three_point_quadrature_is_unscented_two(record_criterion):
    model = _scalar_nonlinear()
    steps = 100
    traj = simulate_trajectory(model, [0.5], steps, seed=2)
    eps = np.random.default_rng(3).normal(0.0, np.sqrt(0.3), (steps, 1))
    gh, ut = PointRule.gauss_hermite(3, 1), PointRule.unscented(1, 2.0)

    fwd_diff, actions = 0.0, []
    bq = bu = GaussianBelief([0.0], [[1.0]])
    for k in range(steps):
        bq, _ = forward_step(gh, bq, traj.observations[k + 1], model)
        bu, _ = forward_step(ut, bu, traj.observations[k + 1], model)
        fwd_diff = max(fwd_diff, np.abs(bq.mean - bu.mean).max(), np.abs(bq.cov - bu.cov).max())
        actions.append(model.g(bq.mean) + eps[k])

    iq = make_inverse(model, gh, PointRule.gauss_hermite(3, 2), [0.0], [[1.0]])
    iu = make_inverse(model, ut, PointRule.unscented(2, 2.0), [0.0], [[1.0]])
    inv_diff = 0.0
    for k in range(steps):
        iq, _ = inverse_step(iq, actions[k], traj.states[k + 1], model)
        iu, _ = inverse_step(iu, actions[k], traj.states[k + 1], model)
        inv_diff = max(inv_diff, np.abs(iq.estimate.mean - iu.estimate.mean).max(),
                       np.abs(iq.estimate.cov - iu.estimate.cov).max())

    ok = fwd_diff <= 1e-10 and inv_diff <= 1e-10
    record_criterion(2, ok, f"forward max diff {fwd_diff:.1e}, inverse max diff {inv_diff:.1e} "
                            "(the inverse filters run on the 2-D augmented state, where the rules differ)")
    assert fwd_diff <= 1e-10
    assert inv_diff <= 1e-10


# 3 -----------------------------------------------------------------------------


def test_criterion_03_linear_oracle(record_criterion, linear2):
    t0 = time.perf_counter()
    model = linear2
    F, H, G = (np.array(model.params[k]) for k in "FHG")
    steps, m0, P0 = 50, np.array([0.5, 0.5]), np.eye(2)
    traj = simulate_trajectory(model, [0.0, 1.0], steps, seed=3)
    ys = traj.observations[1:]
    ref_m, ref_P = oracles.kalman_filter(F, H, model.Q, model.R, m0, P0, ys)

    fwd_err = 0.0
    for rule in (PointRule.cubature(2), PointRule.gauss_hermite(3, 2), PointRule.unscented(2, 1.0)):
        b = GaussianBelief(m0, P0)
        for k in range(steps):
            b, _ = forward_step(rule, b, ys[k], model)
            fwd_err = max(fwd_err, np.abs(b.mean - ref_m[k]).max(), np.abs(b.cov - ref_P[k]).max())

    eps = np.random.default_rng(4).normal(0.0, np.sqrt(model.Sigma_eps[0, 0]), (steps, 1))
    actions = ref_m @ G.T + eps
    state = make_inverse(model, PointRule.cubature(2), PointRule.cubature(3), [0.0, 1.0], 2 * np.eye(2), P0)
    inv_m, inv_P = oracles.linear_inverse_kf(F, H, G, model.Q, model.R, model.Sigma_eps,
                                             [0.0, 1.0], 2 * np.eye(2), P0, actions, traj.states[1:])
    inv_err = 0.0
    for k in range(steps):
        state, _ = inverse_step(state, actions[k], traj.states[k + 1], model)
        inv_err = max(inv_err, np.abs(state.estimate.mean - inv_m[k]).max(),
                      np.abs(state.estimate.cov - inv_P[k]).max())
    elapsed = time.perf_counter() - t0
    ok = fwd_err <= 1e-9 and inv_err <= 1e-8 and elapsed < 1.0
    record_criterion(3, ok, f"forward max err {fwd_err:.1e}, inverse max err {inv_err:.1e}, {elapsed:.2f} s")
    assert ok


# 4 -----------------------------------------------------------------------------


def test_criterion_04_quadrature_exactness(record_criterion):
    worst = 0.0
    for m in range(1, 8):
        ps = gauss_hermite_1d(m)
        z = ps.points[:, 0]
        for p in range(2 * m):
            worst = max(worst, abs(ps.weights @ z**p - oracles.gaussian_moment(p)))
    for n in range(1, 5):
        ps = cubature_rule(n)
        for powers in itertools.product(range(4), repeat=n):
            if sum(powers) > 3:
                continue
            val = ps.weights @ np.prod(ps.points ** np.array(powers), axis=1)
            ref = np.prod([oracles.gaussian_moment(p) for p in powers])
            worst = max(worst, abs(val - ref))
    ok = worst <= 1e-10
    record_criterion(4, ok, f"largest moment error {worst:.1e}")
    assert ok


# 5 -----------------------------------------------------------------------------


def test_criterion_05_scalar_rcrlb(record_criterion):
    J1 = rcrlb_forward_step(FisherInfo([[1.0]]), [[1.0]], [[1.0]], [[1.0]], [[1.0]]).J[0, 0]
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        F, H = rng.uniform(-3, 3, 2)
        Q, R, J = rng.uniform(0.05, 5, 3)
        out = rcrlb_forward_step(FisherInfo([[J]]), [[F]], [[H]], [[Q]], [[R]]).J[0, 0]
        worst = max(worst, abs(out - oracles.scalar_information_form(J, F, H, Q, R)))
    ok = abs(J1 - 1.5) <= 1e-12 and worst <= 1e-12
    record_criterion(5, ok, f"J1 = {float(J1)!r}, information-form max diff {worst:.1e}")
    assert ok


# 6 -----------------------------------------------------------------------------


def test_criterion_06_lorenz_orderings(record_criterion, mc):
    q = mc.get("lorenz_iqkf_q")
    u = mc.get("lorenz_iukf_u")
    elapsed = mc.seconds["lorenz_iqkf_q"] + mc.seconds["lorenz_iukf_u"]
    fq, iq = q.forward.time_avg_rmse, q.inverse.time_avg_rmse
    fu, iu = u.forward.time_avg_rmse, u.inverse.time_avg_rmse
    ok = iq < fq and iq < iu and fq < fu and elapsed < 120.0
    record_criterion(6, ok, f"I-QKF {iq:.3f} < QKF {fq:.3f}; I-QKF < I-UKF {iu:.3f}; "
                            f"QKF < UKF {fu:.3f}; {len(q.runs)}/{q.config.runs} runs kept; {elapsed:.1f} s")
    assert ok


# 7 -----------------------------------------------------------------------------


def test_criterion_07_tracking(record_criterion, mc):
    c = mc.get("tracking_ickf_c")
    u = mc.get("tracking_ickf_u")
    elapsed = mc.seconds["tracking_ickf_c"] + mc.seconds["tracking_ickf_u"]
    ic, iu = c.inverse.time_avg_rmse, u.inverse.time_avg_rmse
    rel = abs(ic - iu) / min(ic, iu)
    ok = rel <= 0.15 and c.inverse.gap < c.forward.gap and elapsed < 300.0
    record_criterion(7, ok, f"I-CKF velocity RMSE {ic:.3f} (C) vs {iu:.3f} (U), rel diff {rel:.1%}; "
                            f"gap inverse {c.inverse.gap:.3f} < forward {c.forward.gap:.3f}; {elapsed:.1f} s")
    assert ok


# 8 -----------------------------------------------------------------------------


def test_criterion_08_bound_sanity(record_criterion, mc):
    failures = []
    for key in BENCHMARKS:
        res = mc.get(key)
        for label, agg in (("forward", res.forward), ("inverse", res.inverse)):
            bad = np.flatnonzero(agg.mse < agg.rcrlb - 2.0 * agg.mse_se)
            failures += [f"{key}/{label}@k={k}" for k in bad]
    ok = not failures
    record_criterion(8, ok, "MSE >= RCRLB - 2 SE at every step, 4 systems x 2 filters"
                     if ok else f"violations: {', '.join(failures[:5])}")
    assert ok


# 9 -----------------------------------------------------------------------------


def test_criterion_09_exponential_boundedness(record_criterion, mc):
    worst_lam, failures = 0.0, []
    for key in ("lorenz_iqkf_q", "tracking_ickf_c"):
        res = mc.get(key)
        for label, agg in (("forward", res.forward), ("inverse", res.inverse)):
            fit = fit_exponential_bound(agg.mse)
            passed, _ = check_exponential_bound(agg.mse, fit)
            worst_lam = max(worst_lam, fit.lam)
            if not (fit.lam < 1 and np.isfinite(fit.nu) and passed):
                failures.append(f"{key}/{label}")
    ok = not failures
    record_criterion(9, ok, f"largest lambda {worst_lam:.6f}" if ok else f"failed: {failures}")
    assert ok


# 10 ----------------------------------------------------------------------------


def test_criterion_10_determinism(record_criterion, tmp_path, capsys):
    outputs = []
    for attempt in ("first", "second"):
        out_dir = tmp_path / attempt
        assert main(["run", "lorenz_iukf_u.cfg", "--out-dir", str(out_dir)]) == 0
        assert main(["run", "tracking.cfg", "--runs", "20", "--out-dir", str(out_dir)]) == 0
        outputs.append({p.name: p.read_bytes() for p in sorted(out_dir.iterdir())})
    capsys.readouterr()
    ok = outputs[0] == outputs[1] and len(outputs[0]) == 4
    record_criterion(10, ok, f"{len(outputs[0])} files byte-identical across two invocations")
    assert ok
