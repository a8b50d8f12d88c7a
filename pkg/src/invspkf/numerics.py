"""Small dense linear-algebra helpers shared by the filters.

All functions accept stacked matrices (leading batch axes) where that makes
sense, so a whole set of sigma-point sub-problems can be handled in one call.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DidNotConverge,
    NonFiniteOutput,
    NotPositiveSemidefinite,
    NotSymmetric,
)

JITTER_DOUBLINGS = 20
SYMMETRY_RTOL = 1e-12


@dataclass(frozen=True)
class SymmetricEigenResult:
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # column i pairs with eigenvalues[i]


def _check_symmetric(A: np.ndarray) -> None:
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    asym = np.max(np.abs(A - np.swapaxes(A, -1, -2))) if A.size else 0.0
    if asym > SYMMETRY_RTOL * scale:
        raise NotSymmetric(f"matrix asymmetric by {asym:.3e}")


def _cholesky_one(A: np.ndarray, jitter: float) -> np.ndarray:
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        pass
    n = A.shape[-1]
    if not np.any(A):
        return np.zeros_like(A)
    delta = jitter * abs(np.trace(A)) / n
    if delta <= 0.0:
        raise NotPositiveSemidefinite("matrix is not positive definite and jitter is disabled")
    eye = np.eye(n)
    for _ in range(JITTER_DOUBLINGS + 1):
        try:
            return np.linalg.cholesky(A + delta * eye)
        except np.linalg.LinAlgError:
            delta *= 2.0
    raise NotPositiveSemidefinite(f"Cholesky failed with jitter up to {delta / 2:.3e}")


def cholesky_sqrt(A, jitter: float = 1e-12) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == A``.

    A matrix that is indefinite by roundoff is factored as ``A + delta*I``,
    where ``delta`` starts at ``jitter * trace(A) / n`` and doubles up to
    20 times. ``jitter=0`` disables the repair. An all-zero matrix yields a
    zero factor.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ValueError(f"expected square matrix, got shape {A.shape}")
    _check_symmetric(A)
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        pass
    if A.ndim == 2:
        return _cholesky_one(A, jitter)
    flat = A.reshape(-1, *A.shape[-2:])
    out = np.empty_like(flat)
    for i, Ai in enumerate(flat):
        out[i] = _cholesky_one(Ai, jitter)
    return out.reshape(A.shape)


def noise_factor(C) -> np.ndarray:
    """Square-root factor ``S`` with ``S @ S.T == C`` for PSD, possibly singular ``C``.

    Used for sampling; unlike :func:`cholesky_sqrt` it adds no jitter, so
    directions with zero variance receive exactly zero noise.
    """
    C = np.asarray(C, dtype=float)
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (C + C.T))
        if w.min() < -1e-10 * max(1.0, abs(w).max()):
            raise NotPositiveSemidefinite("noise covariance has a negative eigenvalue")
        return V * np.sqrt(np.clip(w, 0.0, None))


def symm_tridiag_eigen(diag, offdiag, max_sweeps_per_dim: int = 30) -> SymmetricEigenResult:
    """Eigendecomposition of a symmetric tridiagonal matrix by implicit-shift QL.

    ``diag`` has length n, ``offdiag`` length n-1. Eigenvalues are returned in
    ascending order with orthonormal eigenvectors as columns.
    """
    d = np.array(diag, dtype=float)
    n = d.size
    off = np.asarray(offdiag, dtype=float)
    if off.size != max(n - 1, 0):
        raise ValueError("offdiag must have length len(diag) - 1")
    e = np.zeros(n)
    e[: n - 1] = off
    z = np.eye(n)
    cap = max_sweeps_per_dim * n
    iters = 0
    eps = np.finfo(float).eps

    for l in range(n):
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= eps * dd:
                    break
                m += 1
            if m == l:
                break
            iters += 1
            if iters > cap:
                raise DidNotConverge(f"tridiagonal QL exceeded {cap} iterations")
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + math.copysign(r, g))
            s = c = 1.0
            p = 0.0
            i = m - 1
            underflow = False
            while i >= l:
                f = s * e[i]
                b = c * e[i]
                r = math.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    underflow = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                zi = z[:, i].copy()
                zi1 = z[:, i + 1].copy()
                z[:, i + 1] = s * zi + c * zi1
                z[:, i] = c * zi - s * zi1
                i -= 1
            if underflow:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0

    order = np.argsort(d, kind="stable")
    return SymmetricEigenResult(d[order], z[:, order])


def symmetrize_psd(A, floor: float = 0.0) -> np.ndarray:
    """Average ``A`` with its transpose and raise eigenvalues below ``floor`` to ``floor``."""
    A = np.asarray(A, dtype=float)
    S = 0.5 * (A + np.swapaxes(A, -1, -2))
    w = np.linalg.eigvalsh(S)
    bad = w.min(axis=-1) < floor
    if not np.any(bad):
        return S
    if S.ndim == 2:
        w, V = np.linalg.eigh(S)
        return (V * np.maximum(w, floor)) @ V.T
    out = S.copy()
    idx = np.nonzero(bad)
    w, V = np.linalg.eigh(S[idx])
    fixed = (V * np.maximum(w, floor)[..., None, :]) @ np.swapaxes(V, -1, -2)
    out[idx] = fixed
    return out


def numeric_jacobian(fn, point, step=None, vectorized: bool = False) -> np.ndarray:
    """Central-difference Jacobian of ``fn`` at ``point``.

    ``step`` defaults to ``1e-6 * max(1, |x_j|)`` per coordinate. With
    ``vectorized=True`` the map is called once on the stacked ``(..., 2n, n)``
    perturbations instead of ``2n`` times; ``point`` may then carry leading
    batch axes and the result has shape ``(..., m, n)``.
    """
    x = np.asarray(point, dtype=float)
    if not vectorized:
        x = x.reshape(-1)
    n = x.shape[-1]
    if step is None:
        h = 1e-6 * np.maximum(1.0, np.abs(x))
    else:
        h = np.broadcast_to(np.asarray(step, dtype=float), x.shape)
    pert = h[..., None, :] * np.eye(n)
    X = np.concatenate([x[..., None, :] + pert, x[..., None, :] - pert], axis=-2)
    if vectorized:
        Y = np.asarray(fn(X), dtype=float).reshape(x.shape[:-1] + (2 * n, -1))
    else:
        Y = np.stack([np.atleast_1d(np.asarray(fn(xi), dtype=float)).reshape(-1) for xi in X])
    if not np.all(np.isfinite(Y)):
        raise NonFiniteOutput("map returned non-finite values near the evaluation point")
    D = (Y[..., :n, :] - Y[..., n:, :]) / (2.0 * h[..., :, None])
    return np.swapaxes(D, -1, -2)
