"""Dense full-covariance multivariate Gaussian with sampling and log-density.

The covariance is factorized once on construction (lower Cholesky) and all
densities, samples and entropies are computed from the cached factor.
"""

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, NoConvergence, NotPositiveDefinite

LOG_2PI = float(np.log(2.0 * np.pi))

# Relative tolerance on covariance asymmetry before symmetrization is refused.
SYMMETRY_RTOL = 1e-8


def _symmetrize(cov: np.ndarray) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DimensionMismatch(f"covariance must be square, got shape {cov.shape}")
    scale = max(float(np.abs(cov).max()), 1e-300)
    asym = float(np.abs(cov - cov.T).max())
    if asym > SYMMETRY_RTOL * scale:
        raise DimensionMismatch(
            f"matrix is not symmetric (relative asymmetry {asym / scale:.3e})"
        )
    return 0.5 * (cov + cov.T)


def cholesky(cov: np.ndarray) -> np.ndarray:
    """Lower-triangular factor L with L @ L.T == cov.

    Raises NotPositiveDefinite when a pivot is non-positive, which usually
    means the diagonal regularizer was not applied upstream.
    """
    sym = _symmetrize(cov)
    try:
        return np.linalg.cholesky(sym)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc


class FullCovGaussian:
    """Multivariate normal with dense covariance and cached Cholesky factor.

    Instances are immutable after construction and safe to share read-only.
    """

    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, dtype=float)
        if self.mean.ndim != 1:
            raise DimensionMismatch("mean must be a vector")
        self.cov = _symmetrize(cov)
        if self.cov.shape[0] != self.mean.shape[0]:
            raise DimensionMismatch(
                f"mean has length {self.mean.shape[0]} but cov is {self.cov.shape}"
            )
        self.chol = cholesky(self.cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def log_density(self, a) -> float:
        """log N(a; mean, cov), evaluated through triangular solves."""
        a = np.asarray(a, dtype=float)
        if a.shape != self.mean.shape:
            raise DimensionMismatch(
                f"action has shape {a.shape}, expected {self.mean.shape}"
            )
        d = self.mean - a
        z = solve_triangular(self.chol, d, lower=True)
        log_det = 2.0 * float(np.sum(np.log(np.diag(self.chol))))
        return float(-0.5 * self.dim * LOG_2PI - 0.5 * log_det - 0.5 * z @ z)

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """mean + L z with z standard normal; rng state is caller-owned."""
        if size is None:
            z = rng.standard_normal(self.dim)
            return self.mean + self.chol @ z
        z = rng.standard_normal((size, self.dim))
        return self.mean + z @ self.chol.T

    def entropy(self) -> float:
        """Differential entropy 0.5 * log|2 pi e cov|."""
        log_det = 2.0 * float(np.sum(np.log(np.diag(self.chol))))
        return 0.5 * self.dim * (LOG_2PI + 1.0) + 0.5 * log_det


def min_eigenvalue(cov: np.ndarray, max_rotations: int = 10_000) -> float:
    """Smallest eigenvalue of a symmetric matrix via cyclic Jacobi rotations.

    Accurate to well below 1e-8 absolute for the matrix sizes used here.
    Raises NoConvergence if the off-diagonal mass does not vanish within the
    rotation cap.
    """
    a = _symmetrize(cov).copy()
    n = a.shape[0]
    if n == 1:
        return float(a[0, 0])
    scale = max(float(np.abs(a).max()), 1.0)
    tol = 1e-12 * scale
    rotations = 0
    while True:
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol:
            return float(np.min(np.diag(a)))
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= tol / n:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                rotations += 1
                if rotations >= max_rotations:
                    raise NoConvergence(
                        f"Jacobi sweep did not converge in {max_rotations} rotations"
                    )
