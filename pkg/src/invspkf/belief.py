from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GaussianBelief:
    """Mean and covariance of a Gaussian; the unit of exchange between filters.

    Leading batch axes are allowed: ``mean`` has shape ``(..., n)`` and
    ``cov`` shape ``(..., n, n)``.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if mean.ndim == 0:
            mean = mean.reshape(1)
        if cov.ndim < 2:
            cov = cov.reshape(mean.shape[-1:] * 2) if cov.size == 1 else np.diag(cov)
        n = mean.shape[-1]
        if cov.shape[-2:] != (n, n):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of length {n}")
        if cov.shape[:-2] != mean.shape[:-1]:
            cov = np.broadcast_to(cov, mean.shape[:-1] + (n, n))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]
