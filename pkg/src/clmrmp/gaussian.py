"""Gaussian belief arithmetic: marginals, difference beliefs, contour radii."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence, Union

import numpy as np
from scipy.special import chdtri

PSD_TOL = 1e-9

IndexSpec = Union[slice, range, Sequence[int]]


class DimensionError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def psd_repair(M: np.ndarray, tol: float = PSD_TOL) -> np.ndarray:
    """Symmetrize ``M`` and clamp tiny negative eigenvalues to zero.

    Raises NumericError if the smallest eigenvalue is below ``-tol``.
    """
    S = symmetrize(np.asarray(M, dtype=float))
    if S.size == 0:
        return S
    w = np.linalg.eigvalsh(S)
    if w[0] >= 0.0:
        return S
    if w[0] < -tol:
        raise NumericError(f"matrix is not PSD (min eigenvalue {w[0]:.3e})")
    w, V = np.linalg.eigh(S)
    return symmetrize((V * np.clip(w, 0.0, None)) @ V.T)


def _indices(spec: IndexSpec, n: int) -> np.ndarray:
    if isinstance(spec, slice):
        start, stop, step = spec.start or 0, spec.stop, spec.step or 1
        if stop is None:
            stop = n
        if start < 0 or stop > n or start > stop:
            raise DimensionError(f"block [{start}, {stop}) outside dimension {n}")
        return np.arange(start, stop, step)
    idx = np.asarray(list(spec), dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise DimensionError(f"indices {idx.tolist()} outside dimension {n}")
    return idx


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise DimensionError(
                f"covariance shape {cov.shape} does not match mean size {mean.size}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", psd_repair(cov))

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class DifferenceBelief(GaussianBelief):
    """Belief over the workspace displacement between two robots."""


def marginal(b: GaussianBelief, block: IndexSpec) -> GaussianBelief:
    idx = _indices(block, b.dim)
    return GaussianBelief(b.mean[idx], b.covariance[np.ix_(idx, idx)])


def difference_cov(cov: np.ndarray, idx_i: np.ndarray, idx_j: np.ndarray) -> np.ndarray:
    # Var(a - b) = S_aa + S_bb - S_ab - S_ab^T; the cross block need not be symmetric.
    cross = cov[np.ix_(idx_i, idx_j)]
    return cov[np.ix_(idx_i, idx_i)] + cov[np.ix_(idx_j, idx_j)] - cross - cross.T


def difference_belief(
    b: GaussianBelief, proj_i: IndexSpec, proj_j: IndexSpec
) -> DifferenceBelief:
    """Distribution of ``proj_i(x) - proj_j(x)`` including cross-covariance."""
    idx_i = _indices(proj_i, b.dim)
    idx_j = _indices(proj_j, b.dim)
    if idx_i.size != idx_j.size:
        raise DimensionError("projections must have the same length")
    if np.intersect1d(idx_i, idx_j).size:
        raise ValueError("projection index sets overlap")
    mean = b.mean[idx_i] - b.mean[idx_j]
    return DifferenceBelief(mean, difference_cov(b.covariance, idx_i, idx_j))


@lru_cache(maxsize=256)
def chi2_quantile(prob: float, dof: int) -> float:
    """Value ``a`` with P(chi2_dof <= a) = prob."""
    if not 0.0 < prob < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {prob}")
    if dof == 2:
        return -2.0 * math.log1p(-prob)
    return float(chdtri(dof, 1.0 - prob))


def max_eigenvalue(cov: np.ndarray) -> float:
    cov = np.asarray(cov, dtype=float)
    if cov.shape == (2, 2):
        a, b, d = cov[0, 0], 0.5 * (cov[0, 1] + cov[1, 0]), cov[1, 1]
        half_tr = 0.5 * (a + d)
        disc = math.sqrt(max(0.25 * (a - d) ** 2 + b * b, 0.0))
        lo, hi = half_tr - disc, half_tr + disc
    else:
        w = np.linalg.eigvalsh(symmetrize(cov))
        lo, hi = float(w[0]), float(w[-1])
    if lo < -PSD_TOL:
        raise NumericError(f"covariance is not PSD (min eigenvalue {lo:.3e})")
    return max(hi, 0.0)


def contour_radius(cov: np.ndarray, tail_prob: float) -> float:
    """Radius of an origin-centred sphere holding at least ``1 - tail_prob`` mass.

    The sphere bounds the chi-square probability ellipse of N(0, cov) through
    its largest eigenvalue.
    """
    if not 0.0 < tail_prob < 1.0:
        raise ValueError(f"tail_prob must lie in (0, 1), got {tail_prob}")
    cov = np.atleast_2d(cov)
    lam = max_eigenvalue(cov)
    return math.sqrt(chi2_quantile(1.0 - tail_prob, cov.shape[0]) * lam)
