"""Dense linear algebra and sample statistics used across the package.

The symmetric eigensolver and the Cholesky factorization are delegated to
LAPACK (through numpy/scipy); the functions here pin down the contracts the
rest of the package relies on: descending eigenvalue order with a
deterministic sign convention, a fixed jitter schedule, and residual-checked
solves.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg as la
from scipy import stats

from .exceptions import InsufficientData, InvalidInput, NotPositiveDefinite

JITTER_STEPS = 7  # 0, j0, 10 j0, ..., 1e6 j0 (first entry is zero)


class EigenDecomp(NamedTuple):
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


class CholeskyFactor(NamedTuple):
    lower: np.ndarray
    jitter: float


def as_symmetric(a):
    """Return ``(a + a.T) / 2`` as a float array, validating shape and values."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInput(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput("matrix has non-finite entries")
    return 0.5 * (a + a.T)


def sym_eigen(a):
    """Eigendecomposition of a real symmetric matrix.

    Eigenvalues are returned in descending order. Each eigenvector is signed
    so that its largest-magnitude entry is positive (ties go to the first
    such entry), which makes the result reproducible across platforms.
    """
    a = as_symmetric(a)
    w, v = np.linalg.eigh(a)
    order = np.argsort(w, kind="stable")[::-1]
    w = w[order]
    v = v[:, order]
    if v.size:
        pivot = np.argmax(np.abs(v), axis=0)
        signs = np.sign(v[pivot, np.arange(v.shape[1])])
        signs[signs == 0] = 1.0
        v = v * signs
    return EigenDecomp(w, v)


def default_jitter(a):
    a = np.asarray(a, dtype=float)
    scale = float(np.max(np.abs(np.diag(a)))) if a.size else 0.0
    return 1e-10 * (scale if scale > 0 else 1.0)


def cholesky_jittered(a, jitter0=None):
    """Lower Cholesky factor of ``a + jitter * I``.

    ``jitter`` is the first value of ``0, jitter0, 10*jitter0, ..., 1e6*jitter0``
    for which the factorization succeeds.

    Returns
    -------
    CholeskyFactor
        ``(lower, jitter)`` with ``lower @ lower.T == a + jitter * I``.
    """
    a = as_symmetric(a)
    if jitter0 is None:
        jitter0 = default_jitter(a)
    if jitter0 < 0:
        raise InvalidInput("jitter0 must be nonnegative")
    schedule = [0.0]
    if jitter0 > 0:
        schedule += [jitter0 * 10.0**k for k in range(JITTER_STEPS)]
    eye = np.eye(a.shape[0])
    for jitter in schedule:
        try:
            lower = la.cholesky(a + jitter * eye, lower=True, check_finite=False)
        except la.LinAlgError:
            continue
        return CholeskyFactor(lower, float(jitter))
    raise NotPositiveDefinite(
        f"Cholesky failed even with jitter {schedule[-1]:.3g}"
    )


def solve_psd(factor, b):
    """Solve ``(L L^T) x = b`` by forward and back substitution."""
    lower = factor.lower if isinstance(factor, CholeskyFactor) else np.asarray(factor)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != lower.shape[0]:
        raise InvalidInput(
            f"right-hand side has {b.shape[0]} rows, factor is {lower.shape[0]}x{lower.shape[0]}"
        )
    return la.cho_solve((lower, True), b, check_finite=False)


def log_det(factor):
    lower = factor.lower if isinstance(factor, CholeskyFactor) else np.asarray(factor)
    return 2.0 * float(np.sum(np.log(np.diag(lower))))


@dataclass(frozen=True)
class Moments:
    """Sample mean, unbiased variance and an empirical quantile function."""

    mean: float
    variance: float
    std: float
    samples: np.ndarray

    def quantile(self, q):
        # linear interpolation between order statistics
        return np.quantile(self.samples, q)

    def ci(self, level=0.95):
        tail = 0.5 * (1.0 - level)
        lo, hi = self.quantile([tail, 1.0 - tail])
        return float(lo), float(hi)

    def mean_ci(self, level=0.95):
        """Normal-approximation confidence interval for the mean."""
        half = float(stats.norm.ppf(0.5 + 0.5 * level)) * self.std / np.sqrt(self.samples.size)
        return self.mean - half, self.mean + half

    def as_dict(self):
        return {
            "mean": float(self.mean),
            "std": float(self.std),
            "variance": float(self.variance),
            "quantile_interval95": list(self.ci(0.95)),
            "mean_ci95": [float(v) for v in self.mean_ci(0.95)],
            "count": int(self.samples.size),
        }


def empirical_moments(samples):
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise InsufficientData("at least 2 samples are needed")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("samples contain non-finite values")
    var = float(np.var(x, ddof=1))
    return Moments(float(np.mean(x)), var, float(np.sqrt(var)), np.sort(x))
