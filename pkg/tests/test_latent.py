import numpy as np
import pytest
from scipy.integrate import trapezoid
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sedgpe.exceptions import DegenerateCoordinate, InvalidConfig, InvalidInput
from sedgpe.latent import (
    DependencyLink,
    GaussianKDE,
    dependence_table,
    distance_correlation,
    find_links,
    fit_dependency,
    kde_fit,
    kde_pdf,
    kde_sample,
    sample_joint,
    silverman_bandwidth,
)


def brute_force_dcor(x, y):
    """Distance correlation from explicit double loops."""
    n = len(x)

    def centred(v):
        d = [[abs(v[i] - v[j]) for j in range(n)] for i in range(n)]
        row = [sum(r) / n for r in d]
        grand = sum(row) / n
        return [[d[i][j] - row[i] - row[j] + grand for j in range(n)] for i in range(n)]

    a, b = centred(list(x)), centred(list(y))
    mean = lambda f: sum(f(i, j) for i in range(n) for j in range(n)) / n**2  # noqa: E731
    dcov = mean(lambda i, j: a[i][j] * b[i][j])
    vx, vy = mean(lambda i, j: a[i][j] ** 2), mean(lambda i, j: b[i][j] ** 2)
    return np.sqrt(max(dcov, 0) / np.sqrt(vx * vy))


# --- bandwidth -----------------------------------------------------------------

def test_silverman_d1():
    x = np.random.default_rng(0).standard_normal(100)
    x = (x - x.mean()) / x.std(ddof=1)
    assert silverman_bandwidth(x)[0] == pytest.approx((4 / 300) ** 0.2, rel=1e-12)
    assert (4 / 300) ** 0.2 == pytest.approx(0.4217, abs=1e-4)


@given(st.floats(0.01, 100), st.integers(0, 2**32 - 1))
@settings(max_examples=30)
def test_silverman_scale_equivariant(c, seed):
    x = np.random.default_rng(seed).standard_normal((40, 3))
    np.testing.assert_allclose(silverman_bandwidth(c * x), c * silverman_bandwidth(x), rtol=1e-10)


def test_silverman_constant_coordinate():
    x = np.column_stack([np.arange(10.0), np.ones(10)])
    with pytest.raises(DegenerateCoordinate):
        silverman_bandwidth(x)


# --- pdf -------------------------------------------------------------------------

def test_pdf_symmetric_two_point():
    kde = kde_fit(np.array([-1.0, 1.0]))
    x = np.linspace(-4, 4, 81)
    np.testing.assert_allclose(kde_pdf(kde, x[:, None]), kde_pdf(kde, -x[:, None]), rtol=1e-12)


def test_pdf_max_at_mean_of_symmetric_pair():
    kde = kde_fit(np.array([-1.0, 1.0]))
    grid = np.linspace(-3, 3, 601)
    dens = kde.pdf(grid[:, None])
    assert dens[300] == pytest.approx(dens.max(), rel=1e-12)


def test_pdf_quadrature_integrates_to_one(rng):
    samples = rng.standard_normal(80) * 2 + 1
    kde = kde_fit(samples)
    h = kde.bandwidth_[0]
    grid = np.linspace(samples.min() - 8 * h, samples.max() + 8 * h, 40001)
    assert abs(trapezoid(kde.pdf(grid[:, None]), grid) - 1) <= 1e-3


def test_pdf_quadrature_2d(rng):
    kde = kde_fit(rng.standard_normal((40, 2)))
    h = kde.bandwidth_
    lo, hi = kde.samples_.min(0) - 8 * h, kde.samples_.max(0) + 8 * h
    gx, gy = np.linspace(lo[0], hi[0], 401), np.linspace(lo[1], hi[1], 401)
    X, Y = np.meshgrid(gx, gy, indexing="ij")
    dens = kde.pdf(np.column_stack([X.ravel(), Y.ravel()])).reshape(X.shape)
    assert abs(trapezoid(trapezoid(dens, gy, axis=1), gx) - 1) <= 1e-3


def test_pdf_matches_formula(rng):
    s = rng.standard_normal((15, 2))
    kde = kde_fit(s)
    x = rng.standard_normal((4, 2))
    h = kde.bandwidth_
    phi = lambda z: np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)  # noqa: E731
    ref = [np.mean(np.prod(phi((xi - s) / h) / h, axis=1)) for xi in x]
    np.testing.assert_allclose(kde.pdf(x), ref, rtol=1e-12)


def test_pdf_dimension_mismatch(rng):
    kde = kde_fit(rng.standard_normal((10, 2)))
    with pytest.raises(InvalidInput):
        kde.pdf(np.zeros((1, 3)))


@given(arrays(np.float64, (5, 2), elements=st.floats(-1e3, 1e3)))
@settings(max_examples=40)
def test_pdf_nonnegative(x):
    kde = kde_fit(np.random.default_rng(3).standard_normal((20, 2)))
    assert np.all(kde.pdf(x) >= 0)


# --- sampling ----------------------------------------------------------------------

def test_sample_tiny_bandwidth_stays_on_data():
    s = np.array([[0.0], [1.0], [5.0]])
    draws = GaussianKDE(bandwidth=1e-12).fit(s).sample(200, 0)
    assert np.all(np.min(np.abs(draws - s.T), axis=1) < 1e-9)


def test_sample_two_point_moments():
    kde = GaussianKDE(bandwidth=0.5).fit(np.array([-1.0, 1.0]))
    draws = kde_sample(kde, 100_000, np.random.default_rng(1))
    assert abs(draws.mean()) <= 0.01
    assert abs(draws.var(ddof=1) - 1.25) <= 0.03


def test_sample_reproducible_and_empty():
    kde = kde_fit(np.random.default_rng(0).standard_normal((30, 2)))
    np.testing.assert_array_equal(kde.sample(50, 7), kde.sample(50, 7))
    assert kde.sample(0, 7).shape == (0, 2)


def test_mixture_moments_analytic(rng):
    s = rng.standard_normal((50, 2))
    kde = kde_fit(s)
    mean, var = kde.mixture_moments()
    np.testing.assert_allclose(var, s.var(axis=0, ddof=1) * 49 / 50 + kde.bandwidth_**2)
    np.testing.assert_allclose(mean, s.mean(axis=0))


def test_kde_serialization(rng):
    kde = kde_fit(rng.standard_normal((10, 2)))
    back = GaussianKDE.from_dict(kde.to_dict())
    x = rng.standard_normal((3, 2))
    np.testing.assert_array_equal(back.pdf(x), kde.pdf(x))


# --- distance correlation ------------------------------------------------------------

def test_dcor_self_is_one(rng):
    x = rng.standard_normal(50)
    assert distance_correlation(x, x) == 1.0


def test_dcor_independent_small(rng):
    assert distance_correlation(rng.standard_normal(500), rng.standard_normal(500)) < 0.15


def test_dcor_matches_brute_force(rng):
    x = rng.standard_normal(25)
    y = x**2 + 0.3 * rng.standard_normal(25)
    assert distance_correlation(x, y) == pytest.approx(brute_force_dcor(x, y), rel=1e-10)


def test_dcor_constant_is_zero():
    assert distance_correlation(np.ones(5), np.arange(5.0)) == 0.0


def test_dcor_length_mismatch():
    with pytest.raises(InvalidInput):
        distance_correlation(np.ones(3), np.ones(4))


# values on a 1e-3 grid so that shifting by up to 1e3 cannot absorb them
grid_floats = st.integers(-100_000, 100_000).map(lambda k: k / 1000)


@given(arrays(np.float64, 20, elements=grid_floats),
       arrays(np.float64, 20, elements=grid_floats),
       st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
@settings(max_examples=60)
def test_dcor_symmetric_and_shift_invariant(x, y, cx, cy):
    d = distance_correlation(x, y)
    assert 0 <= d <= 1
    assert distance_correlation(y, x) == pytest.approx(d, abs=1e-9)
    assert distance_correlation(x + cx, y + cy) == pytest.approx(d, abs=1e-6)


# --- dependency links --------------------------------------------------------------------

def test_fit_dependency_exact_line():
    x = np.arange(10.0)
    link = fit_dependency(x, 2 * x + 1)
    assert link.intercept == pytest.approx(1) and link.slope == pytest.approx(2)
    assert link.residual_var == pytest.approx(0, abs=1e-20)


def test_fit_dependency_self():
    x = np.random.default_rng(0).standard_normal(30)
    link = fit_dependency(x, x)
    assert link.slope == pytest.approx(1) and link.intercept == pytest.approx(0, abs=1e-12)


def test_fit_dependency_independent(rng):
    x, y = rng.standard_normal(400), rng.standard_normal(400)
    link = fit_dependency(x, y)
    stderr = np.sqrt(link.residual_var / np.sum((x - x.mean()) ** 2))
    assert abs(link.slope) <= 3 * stderr


def test_fit_dependency_constant_source():
    with pytest.raises(DegenerateCoordinate):
        fit_dependency(np.ones(5), np.arange(5.0))


def test_fit_dependency_residual_var_is_sse_over_n(rng):
    x = rng.standard_normal(50)
    y = 0.5 * x + rng.standard_normal(50)
    link = fit_dependency(x, y)
    resid = y - link.intercept - link.slope * x
    assert link.residual_var == pytest.approx(resid @ resid / 50)


def planted_latents(rng, n=93):
    a = rng.standard_normal((n, 2))
    b = rng.standard_normal((n, 2))
    b[:, 1] = 2 * a[:, 0] + 0.3 * rng.standard_normal(n)
    c = rng.standard_normal((n, 1))
    return {"A": a, "B": b, "C": c}


def test_find_links_planted_pair(rng):
    latents = planted_latents(rng)
    table = dependence_table(latents)
    strong = [(fa, i, fb, j) for fa, i, fb, j, d in table if d > 0.5]
    assert strong == [("A", 0, "B", 1)]
    (link,) = find_links(latents, 0.5, table)
    assert link.source == ("A", 0) and link.target == ("B", 1)
    assert link.slope == pytest.approx(2, abs=0.1)


def test_sample_joint_no_links_is_independent_kde():
    models = {"A": kde_fit(np.random.default_rng(0).standard_normal((20, 2))),
              "B": kde_fit(np.random.default_rng(1).standard_normal((20, 1)))}
    out = sample_joint(models, [], 30, np.random.default_rng(5))
    rng = np.random.default_rng(5)
    np.testing.assert_array_equal(out["A"], models["A"].sample(30, rng))
    np.testing.assert_array_equal(out["B"], models["B"].sample(30, rng))


def test_sample_joint_exact_copy_link():
    models = {"A": kde_fit(np.random.default_rng(0).standard_normal((20, 2))),
              "B": kde_fit(np.random.default_rng(1).standard_normal((20, 1)))}
    link = DependencyLink(("A", 1), ("B", 0), 0.0, 1.0, 0.0)
    out = sample_joint(models, [link], 100, np.random.default_rng(2))
    np.testing.assert_array_equal(out["B"][:, 0], out["A"][:, 1])


def test_sample_joint_reproduces_training_correlation(rng):
    latents = planted_latents(rng)
    models = {f: kde_fit(v) for f, v in latents.items()}
    links = find_links(latents)
    out = sample_joint(models, links, 10_000, np.random.default_rng(9))
    r_train = np.corrcoef(latents["A"][:, 0], latents["B"][:, 1])[0, 1]
    r_draw = np.corrcoef(out["A"][:, 0], out["B"][:, 1])[0, 1]
    assert abs(r_draw - r_train) <= 0.1


def test_sample_joint_cycle_rejected():
    models = {"A": kde_fit(np.random.default_rng(0).standard_normal((20, 1))),
              "B": kde_fit(np.random.default_rng(1).standard_normal((20, 1)))}
    links = [DependencyLink(("A", 0), ("B", 0), 0, 1, 0), DependencyLink(("B", 0), ("A", 0), 0, 1, 0)]
    with pytest.raises(InvalidConfig):
        sample_joint(models, links, 5, np.random.default_rng(0))


def test_sample_joint_duplicate_target_rejected():
    models = {f: kde_fit(np.random.default_rng(k).standard_normal((20, 1))) for k, f in enumerate("ABC")}
    links = [DependencyLink(("A", 0), ("C", 0), 0, 1, 0), DependencyLink(("B", 0), ("C", 0), 0, 1, 0)]
    with pytest.raises(InvalidConfig):
        sample_joint(models, links, 5, np.random.default_rng(0))


def test_sample_joint_chain_order():
    models = {f: kde_fit(np.random.default_rng(k).standard_normal((20, 1))) for k, f in enumerate("ABC")}
    # C depends on B which depends on A: listed in reverse order on purpose
    links = [DependencyLink(("B", 0), ("C", 0), 0, 1, 0), DependencyLink(("A", 0), ("B", 0), 0, 1, 0)]
    out = sample_joint(models, links, 50, np.random.default_rng(0))
    np.testing.assert_array_equal(out["C"], out["A"])


def test_sample_joint_bitwise_reproducible(rng):
    latents = planted_latents(rng)
    models = {f: kde_fit(v) for f, v in latents.items()}
    links = find_links(latents)
    a = sample_joint(models, links, 100, np.random.default_rng(4))
    b = sample_joint(models, links, 100, np.random.default_rng(4))
    for f in a:
        assert a[f].tobytes() == b[f].tobytes()


def test_link_serialization():
    link = DependencyLink(("A", 0), ("B", 1), 0.1, 2.0, 0.09)
    assert DependencyLink.from_dict(link.to_dict()) == link
