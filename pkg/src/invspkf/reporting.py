"""CSV and JSON writers for experiment outputs.

Files are written to a temporary sibling and renamed into place, so a reader
never sees a half-written file. Floats are written with ``repr`` which
round-trips exactly; identical inputs give byte-identical files.
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .evaluation import INVERSE_LINEARIZATION, MonteCarloResult


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def atomic_write(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


SUMMARY_COLUMNS = (
    "k",
    "forward_rmse",
    "forward_rcrlb",
    "inverse_rmse",
    "inverse_rcrlb",
    "forward_rmse_running",
    "forward_rcrlb_running",
    "inverse_rmse_running",
    "inverse_rcrlb_running",
    "forward_mse_se",
    "inverse_mse_se",
)


def summary_rows(result: MonteCarloResult):
    f, i = result.forward, result.inverse
    cols = [f.rmse, f.bound, i.rmse, i.bound, f.running_rmse, f.running_rcrlb,
            i.running_rmse, i.running_rcrlb, f.mse_se, i.mse_se]
    for k in range(f.mse.size):
        yield [k] + [c[k] for c in cols]


def summary_dict(result: MonteCarloResult) -> dict:
    """Everything needed to reproduce and interpret a run, minus wall-clock time."""
    cfg = result.config

    def block(a):
        return {
            "time_avg_rmse": a.time_avg_rmse,
            "time_avg_rcrlb": a.time_avg_rcrlb,
            "gap": a.gap,
            "final_rmse": float(a.rmse[-1]),
            "final_rcrlb": float(a.bound[-1]),
        }

    return {
        "name": cfg.name,
        "config": cfg.resolved(),
        "runs_requested": cfg.runs,
        "runs_kept": len(result.runs),
        "excluded_count": len(result.excluded),
        "excluded": [{"run": int(i), "reason": r} for i, r in result.excluded],
        "error_components": cfg.group(len(cfg.x0)),
        "forward": block(result.forward),
        "inverse": block(result.inverse),
        "inverse_linearization": INVERSE_LINEARIZATION,
    }


def write_summary(result: MonteCarloResult, out_dir, name: str | None = None):
    """Write ``<name>.csv`` (per step) and ``<name>.json`` (aggregate); returns both paths."""
    name = name or result.config.name
    out_dir = Path(out_dir)
    csv_path = atomic_write(out_dir / f"{name}.csv", csv_text(SUMMARY_COLUMNS, summary_rows(result)))
    js = json.dumps(summary_dict(result), indent=2, sort_keys=True) + "\n"
    json_path = atomic_write(out_dir / f"{name}.json", js)
    return csv_path, json_path


def write_traces(fwd, inv, out_dir, name: str):
    """Per-step traces of one recorded run: trajectory, forward and inverse estimates."""
    out_dir = Path(out_dir)
    ft, it = fwd.trace, inv.trace
    xs, ys, acts = ft["states"], ft["observations"], ft["actions"]
    n, n_y, n_a = xs.shape[1], ys.shape[1], acts.shape[1]
    K = xs.shape[0]

    traj = csv_text(
        ["k"] + [f"x{j}" for j in range(n)] + [f"y{j}" for j in range(n_y)] + [f"a{j}" for j in range(n_a)],
        ([k, *xs[k], *ys[k], *acts[k]] for k in range(K)),
    )
    fw = csv_text(
        ["k"] + [f"xhat{j}" for j in range(n)] + [f"var{j}" for j in range(n)] + ["gain_norm"],
        ([k, *ft["mean"][k], *ft["cov_diag"][k], ft["gain_norm"][k]] for k in range(K)),
    )
    iv = csv_text(
        ["k"] + [f"xhathat{j}" for j in range(n)] + [f"var{j}" for j in range(n)]
        + [f"sigma_star{j}" for j in range(n)],
        ([k, *it["mean"][k], *it["cov_diag"][k], *it["sigma_star_diag"][k]] for k in range(K)),
    )
    return (
        atomic_write(out_dir / f"{name}_trajectory.csv", traj),
        atomic_write(out_dir / f"{name}_forward_trace.csv", fw),
        atomic_write(out_dir / f"{name}_inverse_trace.csv", iv),
    )
