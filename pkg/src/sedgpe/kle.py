"""Karhunen-Loeve expansion of a discretized daily wind field.

One expansion is fitted per farm on its ``n_days x 24`` matrix. Latent
coordinates are normalized to unit variance::

    xi_i = u_i . (x - mean) / sqrt(lambda_i)
    x_hat = mean + sum_i sqrt(lambda_i) * xi_i * u_i
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DegenerateField, InsufficientData, InvalidInput
from .numerics import sym_eigen
from .wind import WindFieldMatrix

EIGEN_FLOOR = 1e-12  # relative to the leading eigenvalue


class KarhunenLoeveExpansion(TransformerMixin, BaseEstimator):
    """Truncated empirical KLE keeping a target fraction of total variance.

    Parameters
    ----------
    variance_target : float, default=0.95
        Smallest retained fraction of the total variance, in (0, 1].
    farm_id : str, optional
        Label carried into serialized output.

    Attributes
    ----------
    mean_ : ndarray of shape (n_points,)
    eigenvalues_ : ndarray of shape (n_components_,)
        Retained eigenvalues, descending.
    eigenvectors_ : ndarray of shape (n_points, n_components_)
    all_eigenvalues_ : ndarray of shape (n_points,)
    total_variance_ : float
        Sum of all eigenvalues (trace of the empirical covariance).
    n_components_ : int
    """

    def __init__(self, variance_target=0.95, farm_id=None):
        self.variance_target = variance_target
        self.farm_id = farm_id

    def fit(self, X, y=None):
        if isinstance(X, WindFieldMatrix):
            if self.farm_id is None:
                self.farm_id = X.farm_id
            X = X.values
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise InvalidInput("field must be a 2-D array (days x points)")
        if not 0.0 < self.variance_target <= 1.0:
            raise InvalidInput("variance_target must lie in (0, 1]")
        if X.shape[0] < 2:
            raise InsufficientData("at least two days are needed")
        if not np.all(np.isfinite(X)):
            raise InvalidInput("field has non-finite entries")

        self.mean_ = X.mean(axis=0)
        cov = np.cov(X, rowvar=False, ddof=1).reshape(X.shape[1], X.shape[1])
        w, v = sym_eigen(cov)
        total = float(np.sum(w))
        if not (w[0] > 0.0 and total > 0.0):
            raise DegenerateField("field has zero variance")

        usable = int(np.sum(w > EIGEN_FLOOR * w[0]))
        frac = np.cumsum(w) / total
        p = int(np.searchsorted(frac, self.variance_target - 1e-12) + 1)
        p = min(p, usable)

        self.all_eigenvalues_ = w
        self.total_variance_ = total
        self.n_components_ = p
        self.eigenvalues_ = w[:p].copy()
        self.eigenvectors_ = v[:, :p].copy()
        self.n_days_ = X.shape[0]
        return self

    @property
    def explained_variance_ratio_(self):
        check_is_fitted(self, "eigenvalues_")
        return float(np.sum(self.eigenvalues_) / self.total_variance_)

    def _check_points(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.mean_.size:
            raise InvalidInput(f"expected length-{self.mean_.size} vectors, got {X.shape[-1]}")
        return X

    def transform(self, X):
        """Project field vectors onto the latent coordinates (rows in, rows out)."""
        check_is_fitted(self, "eigenvalues_")
        X = self._check_points(X)
        return (X - self.mean_) @ self.eigenvectors_ / np.sqrt(self.eigenvalues_)

    def inverse_transform(self, xi):
        check_is_fitted(self, "eigenvalues_")
        xi = np.asarray(xi, dtype=float)
        if xi.shape[-1] != self.n_components_:
            raise InvalidInput(f"expected {self.n_components_} latent coordinates, got {xi.shape[-1]}")
        return self.mean_ + (xi * np.sqrt(self.eigenvalues_)) @ self.eigenvectors_.T

    def to_dict(self):
        check_is_fitted(self, "eigenvalues_")
        return {
            "farm_id": self.farm_id,
            "variance_target": self.variance_target,
            "p": self.n_components_,
            "mean": self.mean_.tolist(),
            "eigenvalues": self.all_eigenvalues_.tolist(),
            "eigenvectors": self.eigenvectors_.tolist(),
            "total_variance": self.total_variance_,
            "n_days": self.n_days_,
        }

    @classmethod
    def from_dict(cls, d):
        kle = cls(d["variance_target"], d.get("farm_id"))
        p = int(d["p"])
        kle.mean_ = np.asarray(d["mean"], dtype=float)
        kle.all_eigenvalues_ = np.asarray(d["eigenvalues"], dtype=float)
        kle.eigenvalues_ = kle.all_eigenvalues_[:p].copy()
        kle.eigenvectors_ = np.asarray(d["eigenvectors"], dtype=float).reshape(kle.mean_.size, p)
        kle.total_variance_ = float(d["total_variance"])
        kle.n_components_ = p
        kle.n_days_ = int(d.get("n_days", 0))
        return kle


def fit_kle(field, variance_target=0.95):
    return KarhunenLoeveExpansion(variance_target).fit(field)


def project(basis, day_vector):
    return basis.transform(day_vector)


def reconstruct(basis, xi):
    return basis.inverse_transform(xi)
