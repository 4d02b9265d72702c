"""Self-contained oracle checks run by ``sedgpe validate``.

Each check compares a package routine with an independent brute-force
computation and returns a :class:`CheckResult`. ``perturb`` is a test hook:
it adds a relative error to the package routine's output before the
comparison, so the check must report a failure naming its module.
"""

import time
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .dispatch import case_from_dict, solve_hour
from .gpe import GaussianProcessEmulator, KernelSpec, design_matrix, kernel_matrix
from .latent import GaussianKDE

MODULES = ("gpe", "dispatch", "latent")


@dataclass(frozen=True)
class CheckResult:
    module: str
    name: str
    passed: bool
    error: float
    tolerance: float
    seconds: float

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return (f"{tag} [{self.module}] {self.name}: error {self.error:.3e} "
                f"(tolerance {self.tolerance:.1e}, {self.seconds:.2f} s)")


def random_gp_instance(rng):
    """Random fixed-hyperparameter GP with n <= 10 train, m <= 5 test, p <= 4.

    The summed-distance Matern kernel is not positive definite for p > 1,
    so draws whose training covariance is not positive definite are
    rejected and redrawn.
    """
    while True:
        p = int(rng.integers(1, 5))
        n = int(rng.integers(3, 11))
        m = int(rng.integers(1, 6))
        basis = ("constant", "linear")[int(rng.integers(0, 2))] if n >= p + 3 else "constant"
        kind = ("SE", "E", "RQ", "Matern32")[int(rng.integers(0, 4))]
        spec = KernelSpec(kind, float(rng.uniform(0.5, 2.0)), tuple(rng.uniform(0.3, 2.0, p)),
                          float(rng.uniform(0.5, 3.0)))
        sigma2 = float(10 ** rng.uniform(-4, -1))
        X = rng.uniform(-1, 1, (n, p))
        Y = rng.standard_normal(n) + X.sum(axis=1)
        Xs = rng.uniform(-1, 1, (m, p))
        if np.linalg.eigvalsh(kernel_matrix(spec, X) + sigma2 * np.eye(n)).min() > 1e-8:
            return X, Y, Xs, basis, spec, sigma2


def conditioning_oracle(X, Y, Xs, basis, spec, sigma2, beta):
    """Mean and covariance of the test block given the training block.

    Builds the full joint covariance of (Y, Y*) with the nugget on both
    diagonal blocks and conditions with dense solves. Negative conditional
    variances (possible with kernels that are not positive definite in
    several dimensions, such as the summed-distance Matern form) are set to
    zero, the same post-processing ``predict`` documents.
    """
    Z = np.vstack([X, Xs])
    n = X.shape[0]
    C = kernel_matrix(spec, Z) + sigma2 * np.eye(Z.shape[0])
    mu = design_matrix(Z, basis) @ beta
    C11, C12, C21, C22 = C[:n, :n], C[:n, n:], C[n:, :n], C[n:, n:]
    mean = mu[n:] + C21 @ np.linalg.solve(C11, Y - mu[:n])
    cov = C22 - C21 @ np.linalg.solve(C11, C12)
    cov = 0.5 * (cov + cov.T)
    diag = np.diag_indices_from(cov)
    cov[diag] = np.maximum(cov[diag], 0.0)
    return mean, cov


def check_gp_conditioning(instances=50, seed=0, perturb=0.0, tol=1e-8):
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        X, Y, Xs, basis, spec, sigma2 = random_gp_instance(rng)
        gp = GaussianProcessEmulator(basis, spec, sigma2, optimizer=None).fit(X, Y)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            mean, cov = gp.predict(Xs, return_cov=True)
        mean = mean * (1 + perturb)
        ref_mean, ref_cov = conditioning_oracle(X, Y, Xs, basis, spec, sigma2, gp.beta_)
        worst = max(worst, np.abs(mean - ref_mean).max(), np.abs(cov - ref_cov).max())
    return CheckResult("gpe", f"posterior vs joint-Gaussian conditioning ({instances} instances)",
                       worst <= tol, float(worst), tol, time.perf_counter() - t0)


CONGESTED_3BUS = {
    "name": "three-bus congested",
    "slack_bus": 1,
    "buses": [{"id": 1, "load": 0.0}, {"id": 2, "load": 0.0}, {"id": 3, "load": 200.0}],
    "generators": [
        {"id": "G1", "bus": 1, "a": 0.01, "b": 10.0, "c": 0.0, "g_min": 0.0, "g_max": 300.0},
        {"id": "G2", "bus": 2, "a": 0.02, "b": 20.0, "c": 0.0, "g_min": 0.0, "g_max": 300.0},
    ],
    "lines": [
        {"from": 1, "to": 2, "susceptance": 10.0, "limit": None},
        {"from": 2, "to": 3, "susceptance": 10.0, "limit": None},
        {"from": 1, "to": 3, "susceptance": 10.0, "limit": 100.0},
    ],
}


def dc_flows(case_dict, injections):
    """Line flows from a reduced-susceptance solve (slack angle fixed at 0)."""
    ids = [b["id"] for b in case_dict["buses"]]
    idx = {b: i for i, b in enumerate(ids)}
    n = len(ids)
    B = np.zeros((n, n))
    for ln in case_dict["lines"]:
        i, j, s = idx[ln["from"]], idx[ln["to"]], ln["susceptance"]
        B[i, i] += s
        B[j, j] += s
        B[i, j] -= s
        B[j, i] -= s
    keep = [k for k in range(n) if ids[k] != case_dict["slack_bus"]]
    theta = np.zeros(n)
    theta[keep] = np.linalg.solve(B[np.ix_(keep, keep)], np.asarray(injections)[keep])
    return np.array([ln["susceptance"] * (theta[idx[ln["from"]]] - theta[idx[ln["to"]]])
                     for ln in case_dict["lines"]])


def grid_search_two_generators(case_dict, step=0.01):
    """Exhaustive search over G1's output; G2 takes the balance."""
    g1_spec, g2_spec = case_dict["generators"]
    demand = sum(float(b["load"]) for b in case_dict["buses"])
    ids = [b["id"] for b in case_dict["buses"]]
    best = (np.inf, None)
    for g1 in np.arange(g1_spec["g_min"], g1_spec["g_max"] + step / 2, step):
        g2 = demand - g1
        if not g2_spec["g_min"] <= g2 <= g2_spec["g_max"]:
            continue
        inj = -np.array([float(b["load"]) for b in case_dict["buses"]])
        inj[ids.index(g1_spec["bus"])] += g1
        inj[ids.index(g2_spec["bus"])] += g2
        flows = dc_flows(case_dict, inj)
        limits = np.array([np.inf if ln["limit"] is None else ln["limit"] for ln in case_dict["lines"]])
        if np.any(np.abs(flows) > limits + 1e-9):
            continue
        cost = sum(s["a"] * g * g + s["b"] * g for s, g in ((g1_spec, g1), (g2_spec, g2)))
        if cost < best[0]:
            best = (cost, np.array([g1, g2]))
    return best


def check_dispatch_grid(perturb=0.0, step=0.01):
    t0 = time.perf_counter()
    case = case_from_dict(CONGESTED_3BUS)
    res = solve_hour(case, 1)
    g = res.g * (1 + perturb)
    ref_cost, ref_g = grid_search_two_generators(CONGESTED_3BUS, step)
    err = float(np.abs(g - ref_g).max())
    return CheckResult("dispatch", "congested 3-bus hour vs 0.01 MW grid search",
                       err <= step and res.cost <= ref_cost + 1e-9, err, step, time.perf_counter() - t0)


def check_kde_quadrature(seed=0, perturb=0.0, tol=1e-3):
    t0 = time.perf_counter()
    samples = np.random.default_rng(seed).standard_normal(60)
    kde = GaussianKDE().fit(samples[:, None])
    h = kde.bandwidth_[0]
    grid = np.linspace(samples.min() - 8 * h, samples.max() + 8 * h, 20001)
    dens = kde.pdf(grid[:, None]) * (1 + perturb)
    err = abs(float(trapezoid(dens, grid)) - 1.0)
    return CheckResult("latent", "KDE pdf integrates to one (trapezoid rule)",
                       err <= tol, err, tol, time.perf_counter() - t0)


def run_all(inject_fault=None):
    """Run every oracle; ``inject_fault`` names a module whose output is perturbed."""
    def bump(module):
        return 1e-2 if module == inject_fault else 0.0

    return [
        check_gp_conditioning(perturb=bump("gpe")),
        check_dispatch_grid(perturb=bump("dispatch")),
        check_kde_quadrature(perturb=bump("latent")),
    ]
