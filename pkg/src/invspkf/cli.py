"""Command-line entry point: ``invspkf run | points | rcrlb``.

Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 numerical
failure. Errors are also printed to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .config import ExperimentConfig, FilterSpec, load_config
from .errors import ConfigError, NumericalError
from .evaluation import FisherInfo, _streams, monte_carlo, rcrlb_forward_step, run_coupled_experiment
from .models import simulate_trajectory
from .points import PointRule
from .reporting import csv_text, write_summary, write_traces

log = logging.getLogger("invspkf")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _fail(code, exc, key=None):
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if key is not None:
        payload["key"] = key
    print(json.dumps(payload), file=sys.stderr)
    return code


def _override_filter(spec: FilterSpec, kappa, m) -> FilterSpec:
    if kappa is not None:
        if spec.kind != "ukf":
            raise ConfigError("--kappa applies only when the attacker runs a UKF", "forward.filter")
        spec = FilterSpec("ukf", kappa=kappa)
    if m is not None:
        if spec.kind != "qkf":
            raise ConfigError("--m applies only when the attacker runs a QKF", "forward.filter")
        spec = FilterSpec("qkf", m=m)
    return spec


def _configure(args) -> ExperimentConfig:
    path = args.config or args.config_pos
    if not path:
        raise ConfigError("no config given; pass --config FILE", "config")
    cfg = load_config(path)
    changes = {}
    for flag, field in (("seed", "seed"), ("runs", "runs"), ("horizon", "horizon"),
                        ("workers", "workers"), ("out_dir", "out_dir")):
        value = getattr(args, flag, None)
        if value is not None:
            changes[field] = value
    fwd = _override_filter(cfg.forward, getattr(args, "kappa", None), getattr(args, "m", None))
    if fwd != cfg.forward:
        changes["forward"] = fwd
    return cfg.replace(**changes).validate() if changes else cfg


def cmd_run(args) -> int:
    cfg = _configure(args)
    result = monte_carlo(cfg)
    log.info("%s: %d runs kept, %d excluded, %.2f s", cfg.name, len(result.runs),
             len(result.excluded), result.runtime)
    paths = write_summary(result, cfg.out_dir)
    if args.traces:
        fm, im = run_coupled_experiment(cfg, result.runs[0], record=True)
        paths += write_traces(fm, im, cfg.out_dir, cfg.name)
    for p in paths:
        print(p)
    return EXIT_OK


def _points_rule(args) -> PointRule:
    kind, nums = args.kind, args.args
    if kind == "cubature":
        if len(nums) != 1:
            raise ConfigError("usage: points cubature N", "points")
        return PointRule.cubature(nums[0])
    if kind == "gh":
        if args.m is not None and len(nums) == 1:
            m, n = args.m, nums[0]
        elif len(nums) == 2:
            m, n = nums
        else:
            raise ConfigError("usage: points gh M N (or --m M N)", "points")
        return PointRule.gauss_hermite(m, n)
    if len(nums) != 1 or args.kappa is None:
        raise ConfigError("usage: points unscented N --kappa K", "points")
    return PointRule.unscented(nums[0], args.kappa)


def cmd_points(args) -> int:
    ps = _points_rule(args).point_set()
    n = ps.dim
    rows = ([w, *(p + 0.0)] for w, p in zip(ps.weights, ps.points))  # + 0.0 drops signed zeros
    sys.stdout.write(csv_text(["weight"] + [f"xi{j}" for j in range(n)], rows))
    return EXIT_OK


def rcrlb_table(cfg: ExperimentConfig):
    """Forward bound along the trajectory of run 0, without running any filter."""
    model = cfg.build_model()
    n = model.n_x
    group = cfg.group(n)
    P0 = cfg.matrix(cfg.forward_cov, n, "forward.cov")
    traj = simulate_trajectory(model, cfg.vector(cfg.x0, n, "x0"), cfg.horizon,
                               _streams(cfg.seed, 0)[1], noise=cfg.noise)
    xs = traj.states
    info = FisherInfo.from_covariance(P0)
    header = ["k", "info_trace"] + [f"var{j}" for j in group] + ["bound"]
    rows = []
    for k in range(cfg.horizon + 1):
        if k > 0:
            info = rcrlb_forward_step(info, model.f_jac(xs[k - 1]), model.h_jac(xs[k]),
                                      model.Q, model.R, reg=cfg.rcrlb_reg)
        var = np.diag(info.bound())[group]
        rows.append([k, float(np.trace(info.J)), *var, float(np.sqrt(var.sum()))])
    return header, rows


def cmd_rcrlb(args) -> int:
    header, rows = rcrlb_table(_configure(args))
    sys.stdout.write(csv_text(header, rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="invspkf", description="Forward and inverse sigma-point filter experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def experiment_flags(sp):
        sp.add_argument("config_pos", nargs="?", metavar="CONFIG", help="config file (same as --config)")
        sp.add_argument("--config", help="config file path or bundled name, e.g. lorenz.cfg")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--runs", type=int)
        sp.add_argument("--horizon", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--kappa", type=float, help="override the attacker's UKF kappa")
        sp.add_argument("--m", type=int, help="override the attacker's QKF point count")

    run = sub.add_parser("run", help="Monte-Carlo experiment; writes <name>.csv and <name>.json")
    experiment_flags(run)
    run.add_argument("--out-dir", dest="out_dir")
    run.add_argument("--traces", action="store_true", help="also write per-step traces of the first kept run")
    run.set_defaults(func=cmd_run)

    pts = sub.add_parser("points", help="print a point rule as CSV (weight, then components)")
    pts.add_argument("kind", choices=["cubature", "gh", "unscented"])
    pts.add_argument("args", nargs="*", type=int, metavar="N")
    pts.add_argument("--kappa", type=float)
    pts.add_argument("--m", type=int)
    pts.set_defaults(func=cmd_points)

    rc = sub.add_parser("rcrlb", help="forward RCRLB along a simulated trajectory, as CSV")
    experiment_flags(rc)
    rc.set_defaults(func=cmd_rcrlb)
    return p


def main(argv=None) -> int:
    level = getattr(logging, os.environ.get("INVSPKF_LOG", "WARNING").upper(), logging.WARNING)
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(level)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc, exc.key)
    except NumericalError as exc:
        return _fail(EXIT_NUMERIC, exc)
    except OSError as exc:
        return _fail(EXIT_IO, exc)


if __name__ == "__main__":
    sys.exit(main())
