"""Latin hypercube designs and inverse-CDF transforms."""

import numpy as np

from .exceptions import InvalidInput
from .latent import sample_joint


def lhs(n, d, rng=None):
    """Plain Latin hypercube in ``[0, 1)^(n x d)``.

    Each column holds exactly one point in every stratum ``[k/n, (k+1)/n)``.
    """
    if n < 1 or d < 1:
        raise InvalidInput("n and d must be positive")
    rng = np.random.default_rng(rng)
    strata = np.column_stack([rng.permutation(n) for _ in range(d)])
    u = (strata + rng.random((n, d))) / n
    # (k + u)/n can round up to the next stratum boundary for u close to 1
    return np.minimum(u, np.nextafter((strata + 1) / n, 0.0))


def empirical_inverse_cdf(pool):
    """Quantile function of a sample, linearly interpolating order statistics."""
    pool = np.sort(np.asarray(pool, dtype=float).ravel())
    if pool.size == 0:
        raise InvalidInput("empty reference pool")

    def inverse_cdf(u):
        return np.quantile(pool, np.clip(u, 0.0, 1.0))

    return inverse_cdf


def transform_to_marginal(column, inverse_cdf):
    return np.asarray(inverse_cdf(np.asarray(column, dtype=float)), dtype=float)


def stack_latents(latents):
    """Concatenate per-farm latent blocks into one matrix, in mapping order."""
    return np.hstack([np.asarray(v) for v in latents.values()])


def split_latents(X, dims):
    """Inverse of :func:`stack_latents`; ``dims`` maps farm id to block width."""
    X = np.asarray(X, dtype=float)
    out, start = {}, 0
    for farm, width in dims.items():
        out[farm] = X[:, start:start + width]
        start += width
    if start != X.shape[1]:
        raise InvalidInput(f"design has {X.shape[1]} columns, expected {start}")
    return out


def lhs_latent_design(models, links, n, rng, pool_size=10_000, pool=None):
    """Latin hypercube over the latent space, marginals matched to the KDE model.

    Every column of the unit design is pushed through the empirical inverse
    CDF of the matching column of a reference pool drawn with
    :func:`~sedgpe.latent.sample_joint` (links included).

    Returns
    -------
    X : ndarray of shape (n, p_total)
    pool : ndarray of shape (pool_size, p_total)
    """
    if n < 2:
        raise InvalidInput("design needs at least 2 points")
    rng = np.random.default_rng(rng)
    if pool is None:
        pool = stack_latents(sample_joint(models, links, pool_size, rng))
    unit = lhs(n, pool.shape[1], rng)
    X = np.column_stack([
        transform_to_marginal(unit[:, j], empirical_inverse_cdf(pool[:, j]))
        for j in range(pool.shape[1])
    ])
    return X, pool
