"""Gaussian process emulator with a parametric trend and a nugget.

The model is ``Y = H(X) beta + f(X) + eps`` with ``f ~ GP(0, k_theta)`` and
``eps ~ N(0, sigma2 I)``. Hyperparameters ``(theta, sigma2)`` maximize the
beta-profile log likelihood, where ``beta`` is the weighted least-squares
estimate for the current ``(theta, sigma2)``.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from scipy.optimize import minimize
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import FitFailed, InvalidInput, NotPositiveDefinite, RankDeficientBasis
from .numerics import cholesky_jittered, log_det, solve_psd

BASES = ("constant", "linear", "pure-quadratic")
KERNELS = ("SE", "E", "RQ", "Matern32")
_LOG_2PI = np.log(2.0 * np.pi)


def design_matrix(X, basis="pure-quadratic"):
    """Trend basis rows: ``(1)``, ``(1, x)`` or ``(1, x, x**2)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    ones = np.ones((X.shape[0], 1))
    if basis == "constant":
        return ones
    if basis == "linear":
        return np.hstack([ones, X])
    if basis == "pure-quadratic":
        return np.hstack([ones, X, X * X])
    raise InvalidInput(f"unknown mean basis {basis!r}; choose from {BASES}")


def basis_width(basis, p):
    return {"constant": 1, "linear": p + 1, "pure-quadratic": 2 * p + 1}[basis]


@dataclass(frozen=True)
class KernelSpec:
    """Stationary covariance kernel with ARD length scales.

    ``alpha`` is used by the rational-quadratic kernel only.
    """

    kind: str
    tau: float
    lengthscales: np.ndarray = field(default_factory=lambda: np.ones(1))
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise InvalidInput(f"unknown kernel {self.kind!r}; choose from {KERNELS}")
        ell = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ell)
        if not (self.tau > 0 and np.all(ell > 0) and self.alpha > 0):
            raise InvalidInput("kernel hyperparameters must be strictly positive")

    @property
    def n_params(self):
        return 1 + self.lengthscales.size + (self.kind == "RQ")

    def to_dict(self):
        d = {"kind": self.kind, "tau": float(self.tau), "lengthscales": self.lengthscales.tolist()}
        if self.kind == "RQ":
            d["alpha"] = float(self.alpha)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], d["tau"], np.asarray(d["lengthscales"]), d.get("alpha", 1.0))


def kernel_matrix(spec, X1, X2=None):
    """Covariance matrix ``k(X1, X2)`` for a :class:`KernelSpec`."""
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = X1 if X2 is None else np.atleast_2d(np.asarray(X2, dtype=float))
    if X1.shape[1] != spec.lengthscales.size or X2.shape[1] != spec.lengthscales.size:
        raise InvalidInput(
            f"kernel has {spec.lengthscales.size} length scales, inputs have "
            f"{X1.shape[1]} and {X2.shape[1]} columns"
        )
    a, b = X1 / spec.lengthscales, X2 / spec.lengthscales
    tau2 = spec.tau**2
    if spec.kind == "SE":
        return tau2 * np.exp(-0.5 * cdist(a, b, "sqeuclidean"))
    if spec.kind == "RQ":
        return tau2 * (1.0 + cdist(a, b, "sqeuclidean") / (2.0 * spec.alpha)) ** (-spec.alpha)
    s = cdist(a, b, "cityblock")
    if spec.kind == "E":
        return tau2 * np.exp(-s)
    s = np.sqrt(3.0) * s
    return tau2 * (1.0 + s) * np.exp(-s)


def kernel_eval(spec, xi, xj):
    return float(kernel_matrix(spec, np.atleast_2d(xi), np.atleast_2d(xj))[0, 0])


def _factor(X, kernel, sigma2):
    K11 = kernel_matrix(kernel, X)
    K11[np.diag_indices_from(K11)] += sigma2
    return cholesky_jittered(K11)


def log_marginal_likelihood(X, Y, basis, kernel, sigma2, beta, factor=None):
    """Gaussian log density of ``Y`` with mean ``H beta`` and covariance ``k + sigma2 I``."""
    Y = np.asarray(Y, dtype=float).ravel()
    H = design_matrix(X, basis)
    if factor is None:
        factor = _factor(X, kernel, sigma2)
    r = Y - H @ np.asarray(beta, dtype=float).ravel()
    return float(-0.5 * r @ solve_psd(factor, r) - 0.5 * Y.size * _LOG_2PI - 0.5 * log_det(factor))


def _wls(H, Y, factor):
    KiH = solve_psd(factor, H)
    A = H.T @ KiH
    try:
        cho = la.cho_factor(A, lower=True)
    except la.LinAlgError:
        raise RankDeficientBasis("trend basis is rank deficient at the design points") from None
    if np.linalg.cond(A) > 1e14:
        raise RankDeficientBasis("trend basis is numerically rank deficient")
    return la.cho_solve(cho, KiH.T @ Y)


def beta_wls(X, Y, basis, kernel, sigma2, factor=None):
    """Generalized least-squares trend ``(H' K^-1 H)^-1 H' K^-1 Y``."""
    H = design_matrix(X, basis)
    if factor is None:
        factor = _factor(X, kernel, sigma2)
    return _wls(H, np.asarray(Y, dtype=float).ravel(), factor)


def profile_log_likelihood(X, Y, basis, kernel, sigma2):
    factor = _factor(X, kernel, sigma2)
    beta = beta_wls(X, Y, basis, kernel, sigma2, factor)
    return log_marginal_likelihood(X, Y, basis, kernel, sigma2, beta, factor)


def _dedupe(X, Y):
    _, first, inverse = np.unique(X, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    if first.size == X.shape[0]:
        return X, Y
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    groups = rank[inverse]
    Ym = np.bincount(groups, weights=Y) / np.bincount(groups)
    return X[np.sort(first)], Ym


class GaussianProcessEmulator(RegressorMixin, BaseEstimator):
    """Gaussian process surrogate fitted by profile maximum likelihood.

    Parameters
    ----------
    basis : {"constant", "linear", "pure-quadratic"}, default="pure-quadratic"
    kernel : {"SE", "E", "RQ", "Matern32"} or KernelSpec, default="SE"
        With a :class:`KernelSpec` and ``optimizer=None`` the given
        hyperparameters are used as-is; otherwise they seed the first start.
    sigma2 : float, optional
        Nugget variance. Required when ``optimizer=None``.
    optimizer : {"L-BFGS-B", None}, default="L-BFGS-B"
    n_restarts : int, default=5
        Number of optimizer starts (the first is the deterministic default).
    noise_free : bool, default=False
        Drop the nugget from the prior covariance at prediction points.
    random_state : int or None, default=0

    Attributes
    ----------
    X_train_, y_train_ : ndarray
        Training data after merging duplicate rows.
    kernel_ : KernelSpec
    sigma2_ : float
    beta_ : ndarray of shape (q,)
    log_likelihood_ : float
        Profile log likelihood at the fitted hyperparameters.
    start_log_likelihoods_ : ndarray
        Profile log likelihood at each start point.
    """

    def __init__(self, basis="pure-quadratic", kernel="SE", sigma2=None, optimizer="L-BFGS-B",
                 n_restarts=5, noise_free=False, random_state=0):
        self.basis = basis
        self.kernel = kernel
        self.sigma2 = sigma2
        self.optimizer = optimizer
        self.n_restarts = n_restarts
        self.noise_free = noise_free
        self.random_state = random_state

    # -- hyperparameter packing -------------------------------------------------
    def _kind(self):
        return self.kernel.kind if isinstance(self.kernel, KernelSpec) else self.kernel

    def _unpack(self, z, p):
        kind = self._kind()
        tau = np.exp(0.5 * z[0])
        ell = np.exp(z[1:1 + p])
        alpha = np.exp(z[1 + p]) if kind == "RQ" else 1.0
        return KernelSpec(kind, tau, ell, alpha), float(np.exp(z[-1]))

    def _pack(self, spec, sigma2):
        z = [2.0 * np.log(spec.tau), *np.log(spec.lengthscales)]
        if spec.kind == "RQ":
            z.append(np.log(spec.alpha))
        z.append(np.log(sigma2))
        return np.array(z)

    def _validate_xy(self, X, y):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(y, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] != y.size:
            raise InvalidInput(f"X has {X.shape[0]} rows but y has {y.size} values")
        if not np.all(np.isfinite(X)):
            raise InvalidInput("X contains non-finite values")
        if not np.all(np.isfinite(y)):
            raise InvalidInput("y contains non-finite values")
        return X, y

    def fit(self, X, y):
        X, y = self._validate_xy(X, y)
        X, y = _dedupe(X, y)
        n, p = X.shape
        if self.basis not in BASES:
            raise InvalidInput(f"unknown mean basis {self.basis!r}")
        q = basis_width(self.basis, p)
        if n < q + 2:
            raise InvalidInput(f"{self.basis} basis needs at least {q + 2} distinct points, got {n}")

        var_y = float(np.var(y))
        scale = var_y if var_y > 0 else 1.0
        self.sigma2_floor_ = 1e-10 * scale

        if self.optimizer is None:
            if not isinstance(self.kernel, KernelSpec) or self.sigma2 is None:
                raise InvalidInput("fixed hyperparameters need a KernelSpec and sigma2")
            kernel, sigma2 = self.kernel, max(float(self.sigma2), 0.0)
            self.start_log_likelihoods_ = np.array([])
        else:
            kernel, sigma2 = self._optimize(X, y, scale)

        self._set_state(X, y, kernel, sigma2)
        return self

    def _optimize(self, X, y, scale):
        n, p = X.shape
        kind = self._kind()
        span = np.ptp(X, axis=0)
        span = np.where(span > 0, span, 1.0)
        if isinstance(self.kernel, KernelSpec):
            default = self.kernel
            s2_0 = self.sigma2 if self.sigma2 else 1e-6 * scale
        else:
            default = KernelSpec(kind, np.sqrt(scale), span, 1.0)
            s2_0 = 1e-6 * scale

        lo = [np.log(1e-8 * scale), *np.log(1e-3 * span)]
        hi = [np.log(1e4 * scale), *np.log(1e3 * span)]
        if kind == "RQ":
            lo.append(np.log(1e-2))
            hi.append(np.log(1e6))
        lo.append(np.log(self.sigma2_floor_))
        hi.append(np.log(10.0 * scale))
        bounds = list(zip(lo, hi))

        rng = np.random.default_rng(self.random_state)
        starts = [np.clip(self._pack(default, s2_0), lo, hi)]
        for _ in range(max(self.n_restarts, 1) - 1):
            z = starts[0].copy()
            z[0] += rng.uniform(-1.0, 1.0)
            z[1:1 + p] += rng.uniform(-1.5, 1.0, size=p)
            if kind == "RQ":
                z[1 + p] += rng.uniform(-1.0, 2.0)
            z[-1] = np.log(scale) + rng.uniform(np.log(1e-8), np.log(1e-4))
            starts.append(np.clip(z, lo, hi))

        def negll(z):
            spec, s2 = self._unpack(z, p)
            try:
                value = profile_log_likelihood(X, y, self.basis, spec, s2)
            except (NotPositiveDefinite, RankDeficientBasis, la.LinAlgError):
                return 1e300
            return -value if np.isfinite(value) else 1e300

        best_z, best_f, start_ll = None, np.inf, []
        for z0 in starts:
            f0 = negll(z0)
            # kernels that are not positive definite in several dimensions
            # (summed-distance Matern) need a larger nugget to factorize
            while f0 >= 1e300 and z0[-1] + np.log(10.0) <= hi[-1]:
                z0 = z0.copy()
                z0[-1] += np.log(10.0)
                f0 = negll(z0)
            start_ll.append(-f0 if f0 < 1e300 else -np.inf)
            try:
                res = minimize(negll, z0, method="L-BFGS-B", jac="3-point", bounds=bounds,
                               options={"maxiter": 500, "ftol": 1e-13, "gtol": 1e-9})
                z, f = res.x, res.fun
            except (ValueError, FloatingPointError):
                z, f = z0, f0
            if f0 < f:
                z, f = z0, f0
            if f < best_f:
                best_z, best_f = z, f
        self.start_log_likelihoods_ = np.array(start_ll)
        if best_z is None or best_f >= 1e300:
            raise FitFailed("covariance factorization failed at every start")
        return self._unpack(best_z, p)

    def _set_state(self, X, y, kernel, sigma2):
        factor = _factor(X, kernel, sigma2)
        H = design_matrix(X, self.basis)
        beta = _wls(H, y, factor)
        self.X_train_ = X
        self.y_train_ = y
        self.kernel_ = kernel
        self.sigma2_ = sigma2
        self.jitter_ = factor.jitter
        self.factor_ = factor
        self.beta_ = beta
        self.alpha_ = solve_psd(factor, y - H @ beta)
        self.log_likelihood_ = log_marginal_likelihood(X, y, self.basis, kernel, sigma2, beta, factor)
        self.n_features_in_ = X.shape[1]

    def predict(self, X, return_std=False, return_cov=False):
        """Posterior mean and optionally its standard deviation or covariance."""
        check_is_fitted(self, "alpha_")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, self.n_features_in_) if X.size else np.empty((0, self.n_features_in_))
        if X.shape[1] != self.n_features_in_:
            raise InvalidInput(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        m = X.shape[0]
        if m == 0:
            mean = np.empty(0)
            if return_cov:
                return mean, np.empty((0, 0))
            return (mean, np.empty(0)) if return_std else mean
        K21 = kernel_matrix(self.kernel_, X, self.X_train_)
        mean = design_matrix(X, self.basis) @ self.beta_ + K21 @ self.alpha_
        if not (return_std or return_cov):
            return mean
        v = la.solve_triangular(self.factor_.lower, K21.T, lower=True, check_finite=False)
        nugget = 0.0 if self.noise_free else self.sigma2_
        if return_cov:
            cov = kernel_matrix(self.kernel_, X) - v.T @ v
            cov = 0.5 * (cov + cov.T)
            cov[np.diag_indices(m)] += nugget
            self._clamp(np.diagonal(cov).copy(), cov)
            return mean, cov
        var = self.kernel_.tau**2 + nugget - np.sum(v * v, axis=0)
        var = self._clamp(var)
        return mean, np.sqrt(var)

    def _clamp(self, diag, cov=None):
        neg = diag < 0
        count = int(np.sum(neg))
        if count:
            warnings.warn(f"clamped {count} negative posterior variance(s) to 0", RuntimeWarning)
            diag = np.where(neg, 0.0, diag)
            if cov is not None:
                cov[np.diag_indices(cov.shape[0])] = diag
        self.clamped_variances_ = getattr(self, "clamped_variances_", 0) + count
        return diag

    def to_dict(self):
        check_is_fitted(self, "alpha_")
        return {
            "basis": self.basis,
            "kernel": self.kernel_.to_dict(),
            "sigma2": self.sigma2_,
            "beta": self.beta_.tolist(),
            "noise_free": self.noise_free,
            "log_likelihood": self.log_likelihood_,
            "X": self.X_train_.tolist(),
            "Y": self.y_train_.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        kernel = KernelSpec.from_dict(d["kernel"])
        gp = cls(d["basis"], kernel, d["sigma2"], optimizer=None, noise_free=d.get("noise_free", False))
        X = np.asarray(d["X"], dtype=float).reshape(len(d["Y"]), -1)
        gp._set_state(X, np.asarray(d["Y"], dtype=float), kernel, float(d["sigma2"]))
        return gp


def fit(X, Y, basis="pure-quadratic", kernel="SE", **options):
    return GaussianProcessEmulator(basis, kernel, **options).fit(X, Y)


def predict(model, Xstar):
    """Posterior mean and full covariance at ``Xstar``."""
    return model.predict(Xstar, return_cov=True)
