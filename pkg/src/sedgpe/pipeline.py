"""End-to-end uncertainty propagation through a GP surrogate of the dispatch cost.

Stages: ingest -> hourly averages and power curves -> KLE per farm ->
KDE and cross-farm links -> scenario generation -> Latin hypercube
training design -> dispatch solves -> GP fit -> surrogate propagation ->
moments. All randomness derives from ``PipelineConfig.seed``.
"""

import contextlib
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .dispatch import daily_costs, load_case, wind_injection
from .exceptions import FitAborted, InsufficientData, InvalidConfig, InvalidInput, SedError
from .gpe import BASES, KERNELS, GaussianProcessEmulator, basis_width
from .kle import KarhunenLoeveExpansion
from .latent import GaussianKDE, dependence_table, find_links, sample_joint
from .numerics import empirical_moments
from .sampling import empirical_inverse_cdf, lhs_latent_design, split_latents, stack_latents
from .wind import PowerCurveTree, WindFieldMatrix, hourly_farm_average, ingest_csv

log = logging.getLogger(__name__)

INFEASIBLE_LIMIT = 0.10


@dataclass
class PipelineConfig:
    variance_target: float = 0.95
    train_size: int = 100
    mc_size: int = 8000
    basis: str = "pure-quadratic"
    kernel: str = "SE"
    n_restarts: int = 5
    dependency_threshold: float = 0.5
    reference_pool: int = 10_000
    max_depth: int = 6
    min_leaf_count: int = 5
    seed: int = 0
    with_mc: bool = False
    curtailment: bool = False
    replicate: bool = True
    surrogate: str = "gpe"  # "passthrough" evaluates the solver instead (debug)
    jobs: int = 0  # worker threads for solver/surrogate batches; 0 = all cores

    def validate(self, p_total=None):
        if not 0 < self.variance_target <= 1:
            raise InvalidConfig("variance_target must lie in (0, 1]")
        if self.mc_size < 100:
            raise InvalidConfig("mc_size must be at least 100")
        if self.basis not in BASES:
            raise InvalidConfig(f"basis must be one of {BASES}")
        if self.kernel not in KERNELS:
            raise InvalidConfig(f"kernel must be one of {KERNELS}")
        if self.surrogate not in ("gpe", "passthrough"):
            raise InvalidConfig("surrogate must be 'gpe' or 'passthrough'")
        if self.jobs < 0:
            raise InvalidConfig("jobs must be >= 0 (0 = all cores)")
        if self.train_size < 2:
            raise InvalidConfig("train_size must be at least 2")
        if p_total is not None and self.train_size < basis_width(self.basis, p_total) + 2:
            raise InvalidConfig(
                f"train_size {self.train_size} is too small for a {self.basis} basis "
                f"in {p_total} dimensions (need {basis_width(self.basis, p_total) + 2})"
            )


@contextlib.contextmanager
def stage(name):
    """Attach a stage label to any package error raised inside the block."""
    try:
        yield
    except SedError as err:
        if err.stage is None:
            err.stage = name
        raise


@dataclass
class FarmModels:
    """Everything fitted from historical data, keyed by farm id in a fixed order."""

    speed: dict
    power: dict
    curves: dict
    kle: dict
    latents: dict
    kdes: dict
    links: list
    dependence: list
    days: tuple

    @property
    def dims(self):
        return {f: k.n_components_ for f, k in self.kle.items()}

    @property
    def p_total(self):
        return sum(self.dims.values())


def load_fields(wind_paths):
    """Ingest CSV files and return aligned ``(speed, power)`` matrices per farm."""
    with stage("ingest"):
        by_farm = {}
        for path in wind_paths:
            for rec in ingest_csv(path):
                by_farm.setdefault(rec.farm_id, []).append(rec)
        if not by_farm:
            raise InsufficientData("no wind records")
    with stage("hourly-average"):
        speed, power = {}, {}
        for farm, recs in by_farm.items():
            speed[farm], power[farm] = hourly_farm_average(recs)
        common = set.intersection(*(set(m.days) for m in speed.values()))
        days = tuple(sorted(common))
        if len(days) < 2:
            raise InsufficientData("fewer than two days are complete at every farm")
        for farm in speed:
            keep = [speed[farm].days.index(d) for d in days]
            dropped = tuple(sorted(set(speed[farm].dropped_days) | (set(speed[farm].days) - common)))
            for store, m in ((speed, speed[farm]), (power, power[farm])):
                store[farm] = WindFieldMatrix(farm, m.quantity, days, m.values[keep], dropped)
            if dropped:
                log.info("farm %s: dropped %d incomplete day(s)", farm, len(dropped))
    return speed, power, days


def fit_farm_models(speed, power, days, config):
    with stage("power-curve"):
        curves = {
            f: PowerCurveTree(config.max_depth, config.min_leaf_count).fit(
                speed[f].values.ravel(), power[f].values.ravel())
            for f in speed
        }
    with stage("kle"):
        kle = {f: KarhunenLoeveExpansion(config.variance_target, f).fit(speed[f]) for f in speed}
        latents = {f: kle[f].transform(speed[f].values) for f in speed}
    with stage("latent-stats"):
        kdes = {f: GaussianKDE().fit(latents[f]) for f in speed}
        table = dependence_table(latents)
        links = find_links(latents, config.dependency_threshold, table)
    return FarmModels(speed, power, curves, kle, latents, kdes, links, table, days)


def resolve_jobs(jobs):
    return int(jobs) if jobs and jobs > 0 else (os.cpu_count() or 1)


def relative_difference(e_gp, e_mc):
    if e_mc == 0:
        raise InvalidInput("reference mean is zero")
    return abs(e_gp - e_mc) / abs(e_mc)


@dataclass
class UqReport:
    config: dict
    farms: dict
    links: list
    dependence: list
    surrogate: dict
    counts: dict
    gpe: Optional[dict] = None
    monte_carlo: Optional[dict] = None
    relative_difference: Optional[float] = None
    replication: Optional[dict] = None
    trace: Optional[list] = None
    timing: dict = field(default_factory=dict)

    def to_dict(self, include_timing=False):
        d = asdict(self)
        if not include_timing:
            d.pop("timing")
        return d


class _Streams:
    def __init__(self, seed):
        pool, scen, design, fit, retry = np.random.SeedSequence(seed).spawn(5)
        self.pool = np.random.default_rng(pool)
        self.scenarios = np.random.default_rng(scen)
        self.design = np.random.default_rng(design)
        self.fit_seed = int(fit.generate_state(1)[0])
        self.retry = np.random.default_rng(retry)


class Evaluator:
    """Solver evaluation of latent scenarios, chunked across worker threads."""

    def __init__(self, models, case, curtail=False, jobs=1, chunk=2000):
        self.models = models
        self.case = case
        self.curtail = curtail
        self.jobs = resolve_jobs(jobs)
        self.chunk = chunk
        self.calls = 0
        self.seconds = 0.0

    def _costs(self, X):
        latent = split_latents(X, self.models.dims)
        wind = wind_injection(self.models.curves, self.models.kle, latent)
        return daily_costs(self.case, wind, self.curtail)

    def __call__(self, X):
        X = np.atleast_2d(X)
        t0 = time.perf_counter()
        parts = [X[i:i + self.chunk] for i in range(0, X.shape[0], self.chunk)] or [X]
        if self.jobs > 1 and len(parts) > 1:
            with ThreadPoolExecutor(self.jobs) as pool:
                results = list(pool.map(self._costs, parts))
        else:
            results = [self._costs(part) for part in parts]
        self.calls += X.shape[0]
        self.seconds += time.perf_counter() - t0
        return np.concatenate([r[0] for r in results]), np.concatenate([r[1] for r in results])

    def observed(self, power):
        """Daily costs of the historical days' observed power."""
        t0 = time.perf_counter()
        cost, ok = daily_costs(self.case, {f: m.values for f, m in power.items()}, self.curtail)
        self.calls += cost.size
        self.seconds += time.perf_counter() - t0
        return cost, ok


def training_set(evaluator, X, pool, rng):
    """Solve the design; infeasible points are redrawn once, then dropped."""
    Y, ok = evaluator(X)
    bad = np.flatnonzero(~ok)
    if bad.size:
        log.warning("%d infeasible training scenario(s); redrawing once", bad.size)
        inv = [empirical_inverse_cdf(pool[:, j]) for j in range(pool.shape[1])]
        fresh = np.column_stack([inv[j](rng.random(bad.size)) for j in range(pool.shape[1])])
        Y2, ok2 = evaluator(fresh)
        X = X.copy()
        X[bad], Y[bad], ok[bad] = fresh, Y2, ok2
    lost = int(np.sum(~ok))
    if lost > INFEASIBLE_LIMIT * X.shape[0]:
        raise FitAborted(f"{lost} of {X.shape[0]} training scenarios are infeasible")
    return X[ok], Y[ok], lost


def fit_surrogate(X, Y, config, seed):
    gp = GaussianProcessEmulator(config.basis, config.kernel, n_restarts=config.n_restarts,
                                 random_state=seed)
    return gp.fit(X, Y)


def _predict(gp, X, jobs, chunk=2000):
    parts = [X[i:i + chunk] for i in range(0, X.shape[0], chunk)]
    if jobs > 1 and len(parts) > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return np.concatenate(list(pool.map(gp.predict, parts)))
    return np.concatenate([gp.predict(p) for p in parts])


def _stats(values):
    values = np.asarray(values, dtype=float)
    return empirical_moments(values[np.isfinite(values)]).as_dict()


def replicate_empirical(models, gp, evaluator):
    """Solver cost on each historical day versus the surrogate at that day's latent point."""
    if not models.days:
        raise InsufficientData("no historical days to replicate")
    q_data, ok = evaluator.observed(models.power)
    X_days = stack_latents(models.latents)
    q_gp = _predict(gp, X_days, 1) if gp is not None else evaluator(X_days)[0]
    q_data, q_gp = q_data[ok], q_gp[ok]
    return {
        "days": int(ok.sum()),
        "q_data": _stats(q_data),
        "q_gp": _stats(q_gp),
        "mean_relative_difference": relative_difference(float(q_gp.mean()), float(q_data.mean())),
    }


def _farm_summary(models):
    return {
        f: {
            "p": int(models.kle[f].n_components_),
            "explained_variance": float(models.kle[f].explained_variance_ratio_),
            "days": len(models.days),
            "dropped_days": list(models.speed[f].dropped_days),
            "bandwidth": models.kdes[f].bandwidth_.tolist(),
            "power_curve_leaves": int(models.curves[f].n_leaves_),
        }
        for f in models.kle
    }


class Study:
    """Prepared inputs shared by :func:`run` and :func:`convergence_trace`."""

    def __init__(self, config, wind_paths, case):
        config.validate()
        self.config = config
        self.case = load_case(case) if isinstance(case, (str, os.PathLike)) else case
        t0 = time.perf_counter()
        speed, power, days = load_fields(wind_paths)
        self.models = fit_farm_models(speed, power, days, config)
        missing = set(self.case.wind_farms) ^ set(self.models.kle)
        if missing:
            raise InvalidInput(f"wind farms in data and case differ: {sorted(missing)}")
        config.validate(self.models.p_total)
        self.timing = {"prepare_s": time.perf_counter() - t0}
        self.streams = _Streams(config.seed)
        self.evaluator = Evaluator(self.models, self.case, config.curtailment, config.jobs)
        with stage("scenarios"):
            self.pool = stack_latents(sample_joint(self.models.kdes, self.models.links,
                                                   config.reference_pool, self.streams.pool))
            self.scenarios = stack_latents(sample_joint(self.models.kdes, self.models.links,
                                                        config.mc_size, self.streams.scenarios))
        self._mc = None

    def design(self, n, rng):
        with stage("design"):
            X, _ = lhs_latent_design(self.models.kdes, self.models.links, n, rng, pool=self.pool)
        return X

    def train(self, n, rng, fit_seed):
        X = self.design(n, rng)
        with stage("training-solves"):
            X, Y, lost = training_set(self.evaluator, X, self.pool, self.streams.retry)
        if self.config.surrogate == "passthrough":
            return None, X, Y, lost
        with stage("gpe-fit"):
            t0 = time.perf_counter()
            gp = fit_surrogate(X, Y, self.config, fit_seed)
            self.timing["fit_s"] = self.timing.get("fit_s", 0.0) + time.perf_counter() - t0
        return gp, X, Y, lost

    def propagate(self, gp):
        with stage("propagation"):
            t0 = time.perf_counter()
            if gp is None:
                q, ok = self.evaluator(self.scenarios)
                q = np.where(ok, q, np.nan)
            else:
                q = _predict(gp, self.scenarios, resolve_jobs(self.config.jobs))
            self.timing["surrogate_s"] = time.perf_counter() - t0
        return q

    def monte_carlo(self):
        if self._mc is None:
            with stage("monte-carlo"):
                calls0, t0 = self.evaluator.calls, time.perf_counter()
                q, ok = self.evaluator(self.scenarios)
                self._mc_full = np.where(ok, q, np.nan)
                self.timing["monte_carlo_s"] = time.perf_counter() - t0
                self._mc = (q[ok], int(np.sum(~ok)), self.evaluator.calls - calls0)
        return self._mc


def run(config, wind_paths, case, trace_sizes=None):
    """Run the full study and return a :class:`UqReport`."""
    return run_study(config, wind_paths, case, trace_sizes)[0]


def run_study(config, wind_paths, case, trace_sizes=None):
    """Like :func:`run`, also returning per-scenario arrays.

    Returns
    -------
    report : UqReport
    arrays : dict
        ``scenarios`` (mc_size, p_total), ``q_gp`` (surrogate cost per
        scenario), ``q_mc`` (solver cost per scenario, NaN where infeasible,
        only with ``with_mc``), ``X_train`` and ``Y_train``.
    """
    t_start = time.perf_counter()
    study = Study(config, wind_paths, case)
    models = study.models
    gp, X, Y, lost = study.train(config.train_size, study.streams.design, study.streams.fit_seed)
    training_calls = study.evaluator.calls
    q_gp = study.propagate(gp)
    report = UqReport(
        config=asdict(config),
        farms=_farm_summary(models),
        links=[link.to_dict() for link in models.links],
        dependence=[list(row) for row in models.dependence],
        surrogate=_stats(q_gp),
        counts={"training_solves": training_calls, "training_infeasible": lost,
                "surrogate_evaluations": int(np.isfinite(q_gp).sum()), "p_total": models.p_total},
    )
    if gp is not None:
        report.gpe = {
            "kernel": gp.kernel_.to_dict(), "sigma2": gp.sigma2_, "beta": gp.beta_.tolist(),
            "log_likelihood": gp.log_likelihood_, "jitter": gp.jitter_,
        }
    if config.with_mc or trace_sizes:
        q_mc, n_bad, calls = study.monte_carlo()
        report.monte_carlo = {**_stats(q_mc), "infeasible": n_bad}
        report.counts["monte_carlo_solves"] = calls
        report.relative_difference = relative_difference(report.surrogate["mean"], report.monte_carlo["mean"])
    if config.replicate:
        with stage("replication"):
            calls0 = study.evaluator.calls
            report.replication = replicate_empirical(models, gp, study.evaluator)
            report.counts["replication_solves"] = study.evaluator.calls - calls0
    if trace_sizes:
        report.trace = [[int(n), float(d)] for n, d in _trace(study, trace_sizes)]
    report.counts["solver_calls"] = study.evaluator.calls
    study.timing["total_s"] = time.perf_counter() - t_start
    study.timing["solver_s"] = study.evaluator.seconds
    report.timing = dict(study.timing)
    arrays = {"scenarios": study.scenarios, "q_gp": q_gp, "X_train": X, "Y_train": Y}
    if study._mc is not None:
        arrays["q_mc"] = study._mc_full
    return report, arrays


def _trace(study, sizes):
    sizes = [int(n) for n in sizes]
    if sizes != sorted(sizes):
        raise InvalidInput("trace sizes must be ascending")
    q_mc = study.monte_carlo()[0]
    e_mc = float(np.mean(q_mc))
    rows = []
    for n in sizes:
        ss = np.random.SeedSequence([study.config.seed, n])
        design_ss, fit_ss = ss.spawn(2)
        gp, *_ = study.train(n, np.random.default_rng(design_ss), int(fit_ss.generate_state(1)[0]))
        q = study.propagate(gp)
        rows.append((n, relative_difference(float(np.nanmean(q)), e_mc)))
    return rows


def convergence_trace(config, wind_paths, case, sizes):
    """``[(n, d_r), ...]`` with one Monte Carlo reference and a fresh design per ``n``."""
    study = Study(config, wind_paths, case)
    return _trace(study, sizes)
