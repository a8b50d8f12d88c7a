"""Deterministic weighted point sets for Gaussian-weighted integrals.

Point sets live in standardized coordinates (zero mean, identity covariance)
and are moved onto a belief with :func:`transport`.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .belief import GaussianBelief
from .errors import DegenerateSpread, PointBudgetExceeded
from .numerics import cholesky_sqrt, symm_tridiag_eigen

log = logging.getLogger(__name__)

DEFAULT_POINT_BUDGET = 100_000

CUBATURE = "cubature"
GAUSS_HERMITE = "gauss_hermite"
UNSCENTED = "unscented"


@dataclass(frozen=True)
class PointSet:
    points: np.ndarray  # (N, n)
    weights: np.ndarray  # (N,)

    def __post_init__(self):
        self.points.setflags(write=False)
        self.weights.setflags(write=False)

    def __len__(self):
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class PointRule:
    """Which point set to use, and in what dimension.

    ``m`` is the per-axis node count for Gauss-Hermite rules; ``kappa`` the
    spread parameter of the unscented rule.
    """

    kind: str
    dim: int
    m: int | None = None
    kappa: float | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("rule dimension must be >= 1")
        if self.kind == GAUSS_HERMITE:
            if self.m is None or self.m < 1:
                raise ValueError("Gauss-Hermite rule needs m >= 1")
        elif self.kind == UNSCENTED:
            if self.kappa is None:
                raise ValueError("unscented rule needs kappa")
            if self.dim + self.kappa <= 0:
                raise DegenerateSpread(f"n + kappa = {self.dim + self.kappa} <= 0")
        elif self.kind != CUBATURE:
            raise ValueError(f"unknown rule kind {self.kind!r}")

    @classmethod
    def cubature(cls, dim):
        return cls(CUBATURE, dim)

    @classmethod
    def gauss_hermite(cls, m, dim):
        return cls(GAUSS_HERMITE, dim, m=m)

    @classmethod
    def unscented(cls, dim, kappa):
        return cls(UNSCENTED, dim, kappa=float(kappa))

    def with_dim(self, dim: int) -> "PointRule":
        return PointRule(self.kind, dim, self.m, self.kappa)

    @property
    def n_points(self) -> int:
        if self.kind == CUBATURE:
            return 2 * self.dim
        if self.kind == UNSCENTED:
            return 2 * self.dim + 1
        return self.m**self.dim

    def point_set(self, budget: int = DEFAULT_POINT_BUDGET) -> PointSet:
        if self.kind == CUBATURE:
            return cubature_rule(self.dim)
        if self.kind == UNSCENTED:
            return unscented_rule(self.dim, self.kappa)
        return gauss_hermite_nd(self.m, self.dim, budget)

    def label(self) -> str:
        if self.kind == CUBATURE:
            return "ckf"
        if self.kind == UNSCENTED:
            return f"ukf:{self.kappa:g}"
        return f"qkf:{self.m}"


@lru_cache(maxsize=None)
def cubature_rule(n: int) -> PointSet:
    """Third-degree spherical-radial rule: ``+sqrt(n) e_i`` then ``-sqrt(n) e_i``."""
    if n < 1:
        raise ValueError("dimension must be >= 1")
    eye = math.sqrt(n) * np.eye(n)
    return PointSet(np.vstack([eye, -eye]), np.full(2 * n, 1.0 / (2 * n)))


@lru_cache(maxsize=None)
def gauss_hermite_1d(m: int) -> PointSet:
    """m-point Gauss-Hermite rule for the standard normal (Golub-Welsch)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    off = np.sqrt(np.arange(1, m) / 2.0)
    eig = symm_tridiag_eigen(np.zeros(m), off)
    nodes = math.sqrt(2.0) * eig.eigenvalues
    weights = eig.eigenvectors[0, :] ** 2
    # nodes are symmetric about zero; enforce it exactly
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    weights = weights / weights.sum()
    return PointSet(nodes.reshape(m, 1), weights)


@lru_cache(maxsize=None)
def gauss_hermite_nd(m: int, n: int, budget: int = DEFAULT_POINT_BUDGET) -> PointSet:
    """Tensor-product Gauss-Hermite rule with m nodes per axis (odometer order)."""
    if n < 1:
        raise ValueError("dimension must be >= 1")
    count = m**n
    if count > budget:
        raise PointBudgetExceeded(f"{m}-point rule in {n} dimensions needs {count} points (budget {budget})")
    base = gauss_hermite_1d(m)
    nodes = base.points[:, 0]
    idx = np.array(list(itertools.product(range(m), repeat=n)), dtype=int).reshape(count, n)
    pts = nodes[idx]
    w = np.prod(base.weights[idx], axis=1)
    return PointSet(pts, w)


@lru_cache(maxsize=None)
def unscented_rule(n: int, kappa: float) -> PointSet:
    """Center point plus ``+-sqrt(n + kappa) e_i``."""
    spread = n + kappa
    if spread <= 0:
        raise DegenerateSpread(f"n + kappa = {spread} <= 0")
    if kappa < 0:
        log.warning("unscented rule with kappa=%g has a negative center weight", kappa)
    eye = math.sqrt(spread) * np.eye(n)
    pts = np.vstack([np.zeros((1, n)), eye, -eye])
    w = np.full(2 * n + 1, 1.0 / (2 * spread))
    w[0] = kappa / spread
    return PointSet(pts, w)


def transport(point_set: PointSet, belief: GaussianBelief) -> np.ndarray:
    """Move standardized points onto ``belief``: ``mean + chol(cov) @ xi``.

    Returns shape ``(..., N, n)`` for a belief with batch shape ``...``.
    """
    L = cholesky_sqrt(_compact(belief.cov))
    return belief.mean[..., None, :] + point_set.points @ np.swapaxes(L, -1, -2)


def _compact(cov: np.ndarray) -> np.ndarray:
    """Collapse batch axes along which ``cov`` is a broadcast (stride-0) copy."""
    idx = tuple(
        slice(0, 1) if cov.strides[i] == 0 and cov.shape[i] > 1 else slice(None)
        for i in range(cov.ndim - 2)
    )
    return cov[idx]
