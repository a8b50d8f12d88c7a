"""Experiment configuration: an INI-style file with one section per module.

Values are JSON literals (numbers, lists, ``true``/``false``, quoted strings);
bare words are accepted as strings. Unknown sections or keys are rejected.

Example::

    [model]
    name = lorenz
    dt = 0.01

    [forward]
    filter = qkf:5
    mean = [1.35, -3, 6]
    cov = 0.35

    [inverse]
    assumed = qkf:3
    filter = qkf:3
    mean = [-0.2, -0.3, -0.5]
    cov = 0.35

    [evaluation]
    x0 = [-0.2, -0.3, -0.5]
    horizon = 1000
    runs = 50
    seed = 2022

    [cli]
    out_dir = out
"""
from __future__ import annotations

import configparser
import dataclasses
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .models import (
    CoordinatedTurnParams,
    LorenzParams,
    StateSpaceModel,
    coordinated_turn_model,
    linear_model,
    lorenz_model,
)
from .points import PointRule

MODEL_NAMES = ("lorenz", "tracking", "linear")
INIT_MODES = ("fixed", "sampled")


@dataclass(frozen=True)
class FilterSpec:
    """``ckf``, ``qkf:<m>`` or ``ukf:<kappa>``."""

    kind: str
    m: int | None = None
    kappa: float | None = None

    @classmethod
    def parse(cls, text: str, key: str = "filter") -> "FilterSpec":
        name, _, arg = str(text).strip().lower().partition(":")
        try:
            if name == "ckf" and not arg:
                return cls("ckf")
            if name == "qkf":
                m = int(arg)
                if m < 1:
                    raise ValueError
                return cls("qkf", m=m)
            if name == "ukf":
                return cls("ukf", kappa=float(arg))
        except ValueError:
            pass
        raise ConfigError(f"bad filter spec {text!r}; expected ckf, qkf:<m> or ukf:<kappa>", key)

    def rule(self, dim: int) -> PointRule:
        if self.kind == "ckf":
            return PointRule.cubature(dim)
        if self.kind == "qkf":
            return PointRule.gauss_hermite(self.m, dim)
        return PointRule.unscented(dim, self.kappa)

    def __str__(self):
        if self.kind == "ckf":
            return "ckf"
        if self.kind == "qkf":
            return f"qkf:{self.m}"
        return f"ukf:{self.kappa:g}"


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    model_params: dict = field(default_factory=dict)
    forward: FilterSpec = FilterSpec("ckf")
    forward_mean: tuple | None = None
    forward_cov: object = 1.0
    assumed: FilterSpec = FilterSpec("ckf")
    inverse: FilterSpec = FilterSpec("ckf")
    inverse_mean: tuple | None = None
    inverse_cov: object | None = None
    sigma_star0: object | None = None
    x0: tuple = ()
    init_mode: str = "fixed"
    horizon: int = 100
    runs: int = 1
    seed: int = 0
    noise: bool = True
    error_components: tuple | None = None
    rcrlb_reg: float = 1e-9
    divergence_threshold: float = 1e6
    name: str = "experiment"
    out_dir: str = "out"
    workers: int = 1

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    # resolved quantities -------------------------------------------------

    def build_model(self) -> StateSpaceModel:
        p = dict(self.model_params)
        try:
            if self.model == "lorenz":
                return lorenz_model(LorenzParams(**p))
            if self.model == "tracking":
                if "Omega0_deg" in p:
                    p["Omega0"] = math.radians(p.pop("Omega0_deg"))
                if "r_bearing_deg" in p:
                    p["r_bearing"] = math.radians(p.pop("r_bearing_deg")) ** 2
                return coordinated_turn_model(CoordinatedTurnParams(**p))
            return linear_model(
                p["F"], p["H"], p.get("G", p["H"]), p["Q"], p["R"], p.get("Sigma_eps", p["R"])
            )
        except TypeError as exc:
            raise ConfigError(f"bad model parameter: {exc}", "model") from exc
        except KeyError as exc:
            raise ConfigError(f"linear model needs {exc.args[0]}", f"model.{exc.args[0]}") from exc
        except ValueError as exc:
            raise ConfigError(str(exc), "model") from exc

    def matrix(self, value, n, key) -> np.ndarray:
        A = np.asarray(value, dtype=float)
        if A.ndim == 0:
            A = float(A) * np.eye(n)
        elif A.ndim == 1:
            A = np.diag(A)
        if A.shape != (n, n):
            raise ConfigError(f"{key} must be scalar, length-{n} diagonal or {n}x{n}", key)
        if not np.allclose(A, A.T) or np.linalg.eigvalsh(A).min() <= 0:
            raise ConfigError(f"{key} must be symmetric positive definite", key)
        return A

    def vector(self, value, n, key) -> np.ndarray:
        v = np.asarray(value, dtype=float).reshape(-1)
        if v.size != n:
            raise ConfigError(f"{key} must have {n} components", key)
        return v

    def group(self, n_x) -> list:
        if self.error_components is None:
            return list(range(n_x))
        return list(self.error_components)

    def validate(self) -> "ExperimentConfig":
        if self.model not in MODEL_NAMES:
            raise ConfigError(f"unknown model {self.model!r}", "model.name")
        model = self.build_model()
        n = model.n_x
        self.vector(self.x0, n, "evaluation.x0")
        self.matrix(self.forward_cov, n, "forward.cov")
        if self.init_mode not in INIT_MODES:
            raise ConfigError(f"init_mode must be one of {INIT_MODES}", "evaluation.init_mode")
        if self.init_mode == "fixed" and self.forward_mean is None:
            raise ConfigError("fixed initialization needs forward.mean", "forward.mean")
        if self.forward_mean is not None:
            self.vector(self.forward_mean, n, "forward.mean")
        if self.inverse_mean is not None:
            self.vector(self.inverse_mean, n, "inverse.mean")
        if self.inverse_cov is not None:
            self.matrix(self.inverse_cov, n, "inverse.cov")
        if self.sigma_star0 is not None:
            self.matrix(self.sigma_star0, n, "inverse.sigma_star")
        for key, val, low in (("evaluation.horizon", self.horizon, 1), ("evaluation.runs", self.runs, 1),
                              ("cli.workers", self.workers, 1)):
            if not isinstance(val, int) or val < low:
                raise ConfigError(f"{key} must be an integer >= {low}", key)
        if self.error_components is not None:
            if not self.error_components or any(not 0 <= int(i) < n for i in self.error_components):
                raise ConfigError(f"error_components must index 0..{n - 1}", "evaluation.error_components")
        if self.rcrlb_reg < 0:
            raise ConfigError("rcrlb_reg must be non-negative", "evaluation.rcrlb_reg")
        try:
            self.forward.rule(n)
            self.assumed.rule(n)
            self.inverse.rule(n + model.n_y)
        except Exception as exc:
            raise ConfigError(str(exc), "inverse.filter") from exc
        return self

    def resolved(self) -> dict:
        """Plain-data view with defaults materialized, for provenance records.

        Output location and worker count are left out: neither changes results.
        """
        model = self.build_model()
        n = model.n_x
        out = {
            "name": self.name,
            "model": {"name": self.model, **{k: _plain(v) for k, v in model.params.items()}},
            "forward": {
                "filter": str(self.forward),
                "mean": None if self.forward_mean is None else _plain(self.forward_mean),
                "cov": self.matrix(self.forward_cov, n, "forward.cov").tolist(),
            },
            "inverse": {
                "assumed": str(self.assumed),
                "filter": str(self.inverse),
                "mean": _plain(self.inverse_mean if self.inverse_mean is not None else self.x0),
                "cov": self.matrix(self.inverse_cov if self.inverse_cov is not None else self.forward_cov,
                                   n, "inverse.cov").tolist(),
                "sigma_star": self.matrix(self.sigma_star0 if self.sigma_star0 is not None
                                          else self.forward_cov, n, "inverse.sigma_star").tolist(),
            },
            "evaluation": {
                "x0": _plain(self.x0),
                "init_mode": self.init_mode,
                "horizon": self.horizon,
                "runs": self.runs,
                "seed": self.seed,
                "noise": self.noise,
                "error_components": self.group(n),
                "rcrlb_reg": self.rcrlb_reg,
                "divergence_threshold": self.divergence_threshold,
            },
        }
        return out


def _plain(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


_SECTIONS = {
    "model": None,  # model-specific keys validated by the model constructors
    "forward": {"filter", "mean", "cov"},
    "inverse": {"assumed", "filter", "mean", "cov", "sigma_star"},
    "evaluation": {"x0", "init_mode", "horizon", "runs", "seed", "noise", "error_components",
                   "rcrlb_reg", "divergence_threshold"},
    "cli": {"name", "out_dir", "workers"},
}
_MODEL_KEYS = {
    "lorenz": {f.name for f in dataclasses.fields(LorenzParams)},
    "tracking": {f.name for f in dataclasses.fields(CoordinatedTurnParams)} | {"Omega0_deg", "r_bearing_deg"},
    "linear": {"F", "H", "G", "Q", "R", "Sigma_eps"},
}


def _value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw.strip()


def parse_config(text: str, name: str = "experiment") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config: {exc}") from exc

    data = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]", section)
        data[section] = {k: _value(v) for k, v in parser.items(section)}

    model_sec = dict(data.get("model", {}))
    model = model_sec.pop("name", None)
    if model not in MODEL_NAMES:
        raise ConfigError(f"model.name must be one of {MODEL_NAMES}", "model.name")
    for key in model_sec:
        if key not in _MODEL_KEYS[model]:
            raise ConfigError(f"unknown key {key!r} for model {model}", f"model.{key}")
    for section, allowed in _SECTIONS.items():
        if allowed is None:
            continue
        for key in data.get(section, {}):
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in [{section}]", f"{section}.{key}")

    fw = data.get("forward", {})
    inv = data.get("inverse", {})
    ev = data.get("evaluation", {})
    cl = data.get("cli", {})
    if "x0" not in ev:
        if model != "tracking":
            raise ConfigError("evaluation.x0 is required", "evaluation.x0")
        ct = CoordinatedTurnParams()
        omega = model_sec.get("Omega0", math.radians(model_sec.get("Omega0_deg", math.degrees(ct.Omega0))))
        ev["x0"] = [1000.0, 30.0, 1000.0, 0.0, omega]

    def tup(v):
        return None if v is None else tuple(np.asarray(v, dtype=float).reshape(-1).tolist())

    def num(section, key, value, kind):
        if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
            raise ConfigError(f"{section}.{key} must be an integer", f"{section}.{key}")
        if kind is float and (isinstance(value, bool) or not isinstance(value, (int, float))):
            raise ConfigError(f"{section}.{key} must be a number", f"{section}.{key}")
        return kind(value)

    try:
        kwargs = dict(
            model=model,
            model_params=model_sec,
            forward=FilterSpec.parse(fw.get("filter", "ckf"), "forward.filter"),
            forward_mean=tup(fw.get("mean")),
            forward_cov=fw.get("cov", 1.0),
            assumed=FilterSpec.parse(inv.get("assumed", "ckf"), "inverse.assumed"),
            inverse=FilterSpec.parse(inv.get("filter", "ckf"), "inverse.filter"),
            inverse_mean=tup(inv.get("mean")),
            inverse_cov=inv.get("cov"),
            sigma_star0=inv.get("sigma_star"),
            x0=tup(ev["x0"]),
            init_mode=str(ev.get("init_mode", "fixed")),
            horizon=num("evaluation", "horizon", ev.get("horizon", 100), int),
            runs=num("evaluation", "runs", ev.get("runs", 1), int),
            seed=num("evaluation", "seed", ev.get("seed", 0), int),
            noise=bool(ev.get("noise", True)),
            error_components=None if ev.get("error_components") is None
            else tuple(int(i) for i in ev["error_components"]),
            rcrlb_reg=num("evaluation", "rcrlb_reg", ev.get("rcrlb_reg", 1e-9), float),
            divergence_threshold=num("evaluation", "divergence_threshold",
                                     ev.get("divergence_threshold", 1e6), float),
            name=str(cl.get("name", name)),
            out_dir=str(cl.get("out_dir", "out")),
            workers=num("cli", "workers", cl.get("workers", 1), int),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value: {exc}") from exc
    return ExperimentConfig(**kwargs).validate()


def bundled_configs() -> list:
    root = resources.files("invspkf") / "configs"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".cfg"))


def load_config(path) -> ExperimentConfig:
    """Read a config file; a bare name such as ``lorenz.cfg`` falls back to the bundled copy."""
    p = Path(path)
    if p.exists():
        text = p.read_text()
    else:
        bundled = resources.files("invspkf") / "configs" / p.name
        if not bundled.is_file():
            raise ConfigError(f"config file {path} not found", "config")
        text = bundled.read_text()
    return parse_config(text, name=p.stem)
