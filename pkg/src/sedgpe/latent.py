"""Density model and dependence diagnostics for KLE latent coordinates.

Within a farm the latent vector is modeled jointly by a Gaussian product
kernel density estimate. Farms are independent except for explicit
:class:`DependencyLink` entries, which overwrite a target coordinate with a
noisy linear function of a source coordinate drawn first.
"""

from dataclasses import asdict, dataclass
from graphlib import CycleError, TopologicalSorter

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import DegenerateCoordinate, InsufficientData, InvalidConfig, InvalidInput

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def _as_samples(samples):
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise InvalidInput("samples must be an (n, d) array")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("samples contain non-finite values")
    return x


def silverman_bandwidth(samples):
    """Per-coordinate Silverman bandwidth ``std_j * (4 / ((d + 2) n)) ** (1 / (d + 4))``."""
    x = _as_samples(samples)
    n, d = x.shape
    if n < 2:
        raise InsufficientData("bandwidth needs at least 2 samples")
    std = x.std(axis=0, ddof=1)
    flat = np.flatnonzero(~(std > 0))
    if flat.size:
        raise DegenerateCoordinate(f"coordinate(s) {flat.tolist()} have zero variance")
    return std * (4.0 / ((d + 2) * n)) ** (1.0 / (d + 4))


class GaussianKDE(BaseEstimator):
    """Gaussian product-kernel density estimate with per-coordinate bandwidth.

    Parameters
    ----------
    bandwidth : array-like of shape (d,), optional
        Fixed bandwidths; Silverman's rule is used when omitted.
    """

    def __init__(self, bandwidth=None):
        self.bandwidth = bandwidth

    def fit(self, X, y=None):
        x = _as_samples(X)
        if x.shape[0] < 2:
            raise InsufficientData("KDE needs at least 2 samples")
        if self.bandwidth is None:
            h = silverman_bandwidth(x)
        else:
            h = np.broadcast_to(np.asarray(self.bandwidth, dtype=float), (x.shape[1],)).copy()
            if not np.all(h > 0):
                raise InvalidInput("bandwidths must be positive")
        self.samples_ = x
        self.bandwidth_ = h
        return self

    @property
    def n_features_in_(self):
        return self.samples_.shape[1]

    def score_samples(self, X):
        """Log density at each row of ``X``."""
        check_is_fitted(self, "samples_")
        x = _as_samples(X)
        if x.shape[1] != self.samples_.shape[1]:
            raise InvalidInput(f"expected {self.samples_.shape[1]} coordinates, got {x.shape[1]}")
        z = (x[:, None, :] - self.samples_[None, :, :]) / self.bandwidth_
        log_k = -0.5 * np.sum(z * z, axis=2) - x.shape[1] * _LOG_SQRT_2PI - np.sum(np.log(self.bandwidth_))
        top = log_k.max(axis=1, keepdims=True)
        return (top + np.log(np.mean(np.exp(log_k - top), axis=1, keepdims=True))).ravel()

    def pdf(self, X):
        return np.exp(self.score_samples(X))

    def sample(self, n_samples=1, random_state=None):
        """Smoothed bootstrap: a random training row plus N(0, h^2) noise per coordinate."""
        check_is_fitted(self, "samples_")
        rng = np.random.default_rng(random_state)
        n, d = self.samples_.shape
        if n_samples <= 0:
            return np.empty((0, d))
        rows = rng.integers(0, n, size=n_samples)
        return self.samples_[rows] + rng.standard_normal((n_samples, d)) * self.bandwidth_

    def mixture_moments(self):
        """Exact mean and per-coordinate variance of the KDE mixture."""
        check_is_fitted(self, "samples_")
        return self.samples_.mean(axis=0), self.samples_.var(axis=0) + self.bandwidth_**2

    def to_dict(self):
        check_is_fitted(self, "samples_")
        return {"samples": self.samples_.tolist(), "bandwidth": self.bandwidth_.tolist()}

    @classmethod
    def from_dict(cls, d):
        kde = cls(np.asarray(d["bandwidth"]))
        kde.samples_ = np.asarray(d["samples"], dtype=float).reshape(-1, len(d["bandwidth"]))
        kde.bandwidth_ = np.asarray(d["bandwidth"], dtype=float)
        return kde


def kde_fit(samples, bandwidth=None):
    return GaussianKDE(bandwidth).fit(samples)


def kde_pdf(model, x):
    return model.pdf(x)


def kde_sample(model, count, rng):
    return model.sample(count, rng)


def _centered_distances(v):
    a = np.abs(v[:, None] - v[None, :])
    return a - a.mean(axis=0) - a.mean(axis=1)[:, None] + a.mean()


def distance_correlation(x, y):
    """Sample distance correlation of two scalar samples, in [0, 1]."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise InvalidInput(f"length mismatch ({x.size} vs {y.size})")
    if x.size < 2:
        raise InsufficientData("distance correlation needs at least 2 samples")
    a = _centered_distances(x)
    b = _centered_distances(y)
    dvar_x = np.mean(a * a)
    dvar_y = np.mean(b * b)
    if dvar_x <= 0.0 or dvar_y <= 0.0:
        return 0.0
    dcov = max(np.mean(a * b), 0.0)
    return float(min(np.sqrt(dcov / np.sqrt(dvar_x * dvar_y)), 1.0))


@dataclass(frozen=True)
class DependencyLink:
    """``target = intercept + slope * source + N(0, residual_var)``.

    ``source`` and ``target`` are ``(farm_id, coordinate_index)`` pairs.
    """

    source: tuple
    target: tuple
    intercept: float
    slope: float
    residual_var: float

    def to_dict(self):
        d = asdict(self)
        d["source"] = list(self.source)
        d["target"] = list(self.target)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["source"]), tuple(d["target"]), d["intercept"], d["slope"], d["residual_var"])


def fit_dependency(xi_source, xi_target, source=None, target=None):
    """Ordinary least squares of target on source; residual variance is SSE / n."""
    x = np.asarray(xi_source, dtype=float).ravel()
    y = np.asarray(xi_target, dtype=float).ravel()
    if x.size != y.size:
        raise InvalidInput("source and target lengths differ")
    if x.size < 3:
        raise InsufficientData("regression needs at least 3 samples")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if not sxx > 0:
        raise DegenerateCoordinate("source coordinate is constant")
    slope = float(xc @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = y - intercept - slope * x
    return DependencyLink(source, target, intercept, slope, max(float(resid @ resid) / x.size, 0.0))


def dependence_table(latents):
    """Distance correlation for every cross-farm coordinate pair.

    ``latents`` maps farm id to an ``(n, p_farm)`` array (same rows = same days).
    Returns a list of ``(farm_a, i, farm_b, j, dcor)`` with ``farm_a`` before
    ``farm_b`` in mapping order.
    """
    farms = list(latents)
    rows = []
    for ia, fa in enumerate(farms):
        for fb in farms[ia + 1:]:
            xa, xb = np.asarray(latents[fa]), np.asarray(latents[fb])
            for i in range(xa.shape[1]):
                for j in range(xb.shape[1]):
                    rows.append((fa, i, fb, j, distance_correlation(xa[:, i], xb[:, j])))
    return rows


def find_links(latents, threshold=0.5, table=None):
    """Link every cross-farm coordinate pair whose distance correlation exceeds ``threshold``.

    The earlier farm is the source. A target coordinate keeps only its
    strongest candidate source.
    """
    if table is None:
        table = dependence_table(latents)
    best = {}
    for fa, i, fb, j, dcor in table:
        if dcor > threshold and dcor > best.get((fb, j), (None, -1.0))[1]:
            best[(fb, j)] = ((fa, i), dcor)
    links = []
    for (fb, j), ((fa, i), _) in sorted(best.items(), key=lambda kv: (list(latents).index(kv[0][0]), kv[0][1])):
        links.append(fit_dependency(latents[fa][:, i], latents[fb][:, j], (fa, i), (fb, j)))
    return links


def _link_order(links):
    targets = [tuple(link.target) for link in links]
    if len(set(targets)) != len(targets):
        raise InvalidConfig("two links share a target coordinate")
    by_target = {tuple(link.target): link for link in links}
    graph = {t: {tuple(link.source)} for t, link in by_target.items()}
    try:
        order = list(TopologicalSorter(graph).static_order())
    except CycleError as err:
        raise InvalidConfig(f"dependency links form a cycle: {err.args[1]}") from None
    return [by_target[node] for node in order if node in by_target]


def sample_joint(models, links, count, rng):
    """Draw ``count`` latent scenarios for every farm.

    Parameters
    ----------
    models : dict
        Farm id to fitted :class:`GaussianKDE`; iteration order fixes the
        order of random draws.
    links : list of DependencyLink
    rng : numpy.random.Generator

    Returns
    -------
    dict mapping farm id to a ``(count, p_farm)`` array.
    """
    ordered = _link_order(links)
    out = {farm: kde.sample(count, rng) for farm, kde in models.items()}
    for link in ordered:
        (sf, si), (tf, ti) = link.source, link.target
        if sf not in out or tf not in out:
            raise InvalidConfig(f"link references unknown farm: {link.source} -> {link.target}")
        noise = rng.standard_normal(count) * np.sqrt(link.residual_var)
        out[tf][:, ti] = link.intercept + link.slope * out[sf][:, si] + noise
    return out
