"""Hourly DC economic dispatch with quadratic generator costs.

For each hour ``t``::

    minimize    sum_i a_i g_i**2 + b_i g_i
    subject to  sum_i g_i = load_t - wind_t               (lossless balance)
                g_min <= g <= g_max
                |PTDF @ (injections_t)| <= line limits    (DC flows)

Wind is a must-take, cost-free injection unless curtailment is enabled, in
which case each farm's output becomes a variable in ``[0, available]``.
There is no coupling between hours (no ramping, no commitment), so a day
is 24 independent hours and the daily cost adds ``24 * sum(c_i)``.

Hours are solved by lambda iteration first (bisection on the system
marginal cost); if that schedule overloads a line the hour is re-solved by
a primal active-set quadratic program.

Case file (JSON)::

    {
      "name": "...", "base_mva": 100, "slack_bus": 1,
      "buses":      [{"id": 1, "load": [24 values, MW]}, ...],
      "generators": [{"id": "G1", "bus": 1, "a": $/MW^2h, "b": $/MWh, "c": $/h,
                      "g_min": MW, "g_max": MW}, ...],
      "lines":      [{"from": 1, "to": 2, "susceptance": p.u., "limit": MW or null}, ...],
      "wind_buses": [{"farm_id": "LV", "bus": 2, "scale": 1.0}, ...]
    }

``scale`` (optional, default 1) multiplies a farm's per-turbine power
curve output to obtain the farm injection in MW.
"""

import json
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .exceptions import Infeasible, InvalidInput
from .wind import HOURS

BALANCE_TOL = 1e-6  # MW
FLOW_TOL = 1e-6  # MW
_QP_REG = 1e-8  # curvature given to zero-cost variables in the QP path


@dataclass(frozen=True)
class DispatchCase:
    name: str
    bus_ids: tuple
    load: np.ndarray  # (n_bus, 24) MW
    gen_ids: tuple
    gen_bus: np.ndarray  # bus index per generator
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    g_min: np.ndarray
    g_max: np.ndarray
    line_from: np.ndarray
    line_to: np.ndarray
    susceptance: np.ndarray
    limit: np.ndarray  # inf where unlimited
    wind_farms: tuple
    wind_bus: np.ndarray
    wind_scale: np.ndarray
    slack: int = 0
    base_mva: float = 100.0
    ptdf: np.ndarray = field(default=None, repr=False)

    @property
    def n_bus(self):
        return len(self.bus_ids)

    @property
    def n_gen(self):
        return len(self.gen_ids)

    @property
    def has_limits(self):
        return bool(np.any(np.isfinite(self.limit)))

    def wind_to_bus(self, wind):
        """Map ``{farm_id: MW array (..., 24)}`` to bus injections ``(..., 24, n_bus)``."""
        missing = [f for f in self.wind_farms if f not in wind]
        if missing:
            raise InvalidInput(f"no wind given for farm(s) {missing}")
        unknown = [f for f in wind if f not in self.wind_farms]
        if unknown:
            raise InvalidInput(f"case has no wind bus for farm(s) {unknown}")
        first = np.asarray(wind[self.wind_farms[0]], dtype=float) if self.wind_farms else np.zeros(HOURS)
        out = np.zeros(first.shape + (self.n_bus,))
        for k, farm in enumerate(self.wind_farms):
            out[..., self.wind_bus[k]] += self.wind_scale[k] * np.asarray(wind[farm], dtype=float)
        return out


def _ptdf(n_bus, slack, frm, to, bsus):
    if frm.size == 0:
        return np.zeros((0, n_bus))
    A = np.zeros((frm.size, n_bus))
    A[np.arange(frm.size), frm] = 1.0
    A[np.arange(frm.size), to] = -1.0
    B = A.T @ (bsus[:, None] * A)
    keep = np.array([i for i in range(n_bus) if i != slack], dtype=int)
    ptdf = np.zeros((frm.size, n_bus))
    ptdf[:, keep] = (bsus[:, None] * A[:, keep]) @ np.linalg.inv(B[np.ix_(keep, keep)])
    return ptdf


def _connected(n_bus, frm, to):
    adj = [[] for _ in range(n_bus)]
    for f, t in zip(frm, to):
        adj[f].append(t)
        adj[t].append(f)
    seen, queue = {0}, deque([0])
    while queue:
        for nb in adj[queue.popleft()]:
            if nb not in seen:
                seen.add(nb)
                queue.append(nb)
    return len(seen) == n_bus


def case_from_dict(d):
    try:
        buses = d["buses"]
        gens = d["generators"]
        lines = d.get("lines", [])
        winds = d.get("wind_buses", [])
    except KeyError as err:
        raise InvalidInput(f"case is missing {err.args[0]!r}") from None
    if not buses or not gens:
        raise InvalidInput("case needs at least one bus and one generator")
    bus_ids = tuple(b["id"] for b in buses)
    if len(set(bus_ids)) != len(bus_ids):
        raise InvalidInput("duplicate bus ids")
    index = {bid: i for i, bid in enumerate(bus_ids)}

    def bus_index(bid, what):
        if bid not in index:
            raise InvalidInput(f"{what} refers to unknown bus {bid!r}")
        return index[bid]

    load = np.zeros((len(buses), HOURS))
    for i, b in enumerate(buses):
        row = np.broadcast_to(np.asarray(b.get("load", 0.0), dtype=float), (HOURS,))
        load[i] = row
    arr = lambda key: np.array([float(g[key]) for g in gens])  # noqa: E731
    a, b_, c = arr("a"), arr("b"), arr("c")
    g_min, g_max = arr("g_min"), arr("g_max")
    if np.any(a < 0):
        raise InvalidInput("quadratic cost coefficients must be nonnegative")
    if np.any(g_min > g_max):
        raise InvalidInput("generator with g_min > g_max")
    gen_bus = np.array([bus_index(g["bus"], f"generator {g.get('id', k)}") for k, g in enumerate(gens)], dtype=int)

    frm = np.array([bus_index(ln["from"], "line") for ln in lines], dtype=int)
    to = np.array([bus_index(ln["to"], "line") for ln in lines], dtype=int)
    bsus = np.array([float(ln["susceptance"]) for ln in lines])
    if np.any(bsus <= 0):
        raise InvalidInput("line susceptances must be positive")
    limit = np.array([np.inf if ln.get("limit") is None else float(ln["limit"]) for ln in lines])
    if not _connected(len(buses), frm, to):
        raise InvalidInput("network graph is not connected")
    slack = bus_index(d.get("slack_bus", bus_ids[0]), "slack_bus")

    farms = tuple(w["farm_id"] for w in winds)
    if len(set(farms)) != len(farms):
        raise InvalidInput("a farm is attached to more than one bus")
    case = DispatchCase(
        name=d.get("name", "case"),
        bus_ids=bus_ids, load=load,
        gen_ids=tuple(g.get("id", f"G{k + 1}") for k, g in enumerate(gens)),
        gen_bus=gen_bus, a=a, b=b_, c=c, g_min=g_min, g_max=g_max,
        line_from=frm, line_to=to, susceptance=bsus, limit=limit,
        wind_farms=farms,
        wind_bus=np.array([bus_index(w["bus"], f"wind farm {w['farm_id']}") for w in winds], dtype=int),
        wind_scale=np.array([float(w.get("scale", 1.0)) for w in winds]),
        slack=slack, base_mva=float(d.get("base_mva", 100.0)),
        ptdf=_ptdf(len(buses), slack, frm, to, bsus),
    )
    peak = float(case.load.sum(axis=0).max())
    if g_max.sum() < peak:
        raise Infeasible(f"total capacity {g_max.sum():g} MW is below peak load {peak:g} MW")
    return case


def load_case(path):
    """Load a case file; ``builtin:<name>`` selects a bundled case."""
    text = str(path)
    if text.startswith("builtin:"):
        data = resources.files("sedgpe").joinpath("data").joinpath(text.split(":", 1)[1] + ".json").read_text()
    else:
        data = Path(path).read_text(encoding="utf-8")
    return case_from_dict(json.loads(data))


@dataclass(frozen=True)
class HourResult:
    g: np.ndarray
    lam: float
    flows: np.ndarray
    cost: float  # variable cost, excludes no-load terms c
    kkt_residual: float
    wind_used: np.ndarray
    method: str


@dataclass(frozen=True)
class DispatchResult:
    cost: float  # $/day
    g: np.ndarray  # (n_gen, 24)
    lam: np.ndarray  # (24,)
    flows: np.ndarray  # (n_line, 24)
    status: str
    kkt_residual: float = 0.0
    failed_hour: int = None


# --------------------------------------------------------------------------
# lambda iteration (vectorized over many independent hour problems)

def _gen_output(lam, a, b, g_min, g_max, upper):
    """Generator response to marginal price ``lam``; zero-curvature units jump at ``b``."""
    lam = lam[..., None]
    safe_a = np.where(a > 0, a, 1.0)
    smooth = (lam - b) / (2.0 * safe_a)
    step = np.where((lam > b) | (upper & (lam == b)), g_max, g_min)
    return np.clip(np.where(a > 0, smooth, step), g_min, g_max)


def lambda_dispatch(a, b, g_min, g_max, demand, iterations=200):
    """Equal-incremental-cost dispatch for a batch of demands.

    Returns ``(g, lam)`` with ``g`` of shape ``demand.shape + (n_gen,)``.
    Generators whose output changes inside the final bracket (the marginal
    units, including equal-cost ties) share the residual in proportion to
    their movement, which splits ties by available range.
    """
    demand = np.asarray(demand, dtype=float)
    mc_lo = b + 2 * a * g_min
    mc_hi = b + 2 * a * g_max
    lo = np.full(demand.shape, float(mc_lo.min()) - 1.0)
    hi = np.full(demand.shape, float(mc_hi.max()) + 1.0)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        over = _gen_output(mid, a, b, g_min, g_max, False).sum(axis=-1) >= demand
        hi = np.where(over, mid, hi)
        lo = np.where(over, lo, mid)
        if np.all(hi - lo <= 1e-13 * np.maximum(1.0, np.abs(hi))):
            break
    g_lo = _gen_output(lo, a, b, g_min, g_max, True)
    g_hi = _gen_output(hi, a, b, g_min, g_max, True)
    t_lo, t_hi = g_lo.sum(axis=-1), g_hi.sum(axis=-1)
    gap = t_hi - t_lo
    frac = np.where(gap > 0, (demand - t_lo) / np.where(gap > 0, gap, 1.0), 1.0)
    frac = np.clip(frac, 0.0, 1.0)
    g = g_lo + frac[..., None] * (g_hi - g_lo)
    return g, hi


def _lambda_kkt(g, lam, a, b, g_min, g_max):
    mc = 2 * a * g + b
    at_min = g <= g_min + 1e-9
    at_max = g >= g_max - 1e-9
    viol = np.abs(mc - lam[..., None])
    viol = np.where(at_max & ~at_min, np.maximum(mc - lam[..., None], 0.0), viol)
    viol = np.where(at_min & ~at_max, np.maximum(lam[..., None] - mc, 0.0), viol)
    viol = np.where(at_min & at_max, 0.0, viol)
    return viol.max(axis=-1)


# --------------------------------------------------------------------------
# active-set QP

def active_set_qp(h, c, A_eq, b_eq, A_in, b_in, x0=None, tol=1e-9, max_iter=500):
    """Minimize ``0.5 x'diag(h)x + c'x`` s.t. ``A_eq x = b_eq``, ``A_in x <= b_in``.

    ``h`` must be strictly positive. A feasible start is found with a
    phase-one linear program when ``x0`` is not given.

    Returns ``(x, nu_eq, mu_in, kkt_residual)``.
    """
    h = np.asarray(h, dtype=float)
    n = h.size
    A_eq = np.asarray(A_eq, dtype=float).reshape(-1, n)
    A_in = np.asarray(A_in, dtype=float).reshape(-1, n)
    b_eq = np.asarray(b_eq, dtype=float).ravel()
    b_in = np.asarray(b_in, dtype=float).ravel()
    m_eq = A_eq.shape[0]

    if x0 is None:
        lp = linprog(np.zeros(n), A_ub=A_in if A_in.size else None, b_ub=b_in if b_in.size else None,
                     A_eq=A_eq if m_eq else None, b_eq=b_eq if m_eq else None,
                     bounds=[(None, None)] * n, method="highs")
        if lp.status != 0:
            raise Infeasible("no schedule satisfies the network and generator limits")
        x = lp.x
    else:
        x = np.asarray(x0, dtype=float).copy()

    scale_in = np.maximum(1.0, np.abs(b_in))

    def independent(rows, cand):
        M = np.vstack([A_eq] + [A_in[r] for r in rows] + [A_in[cand]])
        return np.linalg.matrix_rank(M, tol=1e-10) == M.shape[0]

    work = []
    for i in np.flatnonzero(np.abs(A_in @ x - b_in) <= 1e-9 * scale_in):
        if independent(work, i):
            work.append(int(i))

    for _ in range(max_iter):
        grad = h * x + c
        A = np.vstack([A_eq] + [A_in[work]]) if (m_eq or work) else np.zeros((0, n))
        m = A.shape[0]
        K = np.zeros((n + m, n + m))
        K[np.arange(n), np.arange(n)] = h
        K[:n, n:] = A.T
        K[n:, :n] = A
        rhs = np.concatenate([-grad, np.zeros(m)])
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0] if m else -grad / h
        p, nu = sol[:n], sol[n:]
        if np.max(np.abs(p)) <= tol * max(1.0, np.max(np.abs(x))):
            mu_w = nu[m_eq:]
            if mu_w.size == 0 or mu_w.min() >= -tol:
                break
            work.pop(int(np.argmin(mu_w)))
            continue
        Ap = A_in @ p
        slack = b_in - A_in @ x
        step, block = 1.0, None
        for i in np.flatnonzero(Ap > 1e-14):
            if i in work:
                continue
            s = max(slack[i], 0.0) / Ap[i]
            if s < step:
                step, block = s, int(i)
        x = x + step * p
        if block is not None:
            work.append(block)
    else:
        raise Infeasible("active-set QP did not converge")

    # final multipliers from the converged working set
    grad = h * x + c
    A = np.vstack([A_eq] + [A_in[work]]) if (m_eq or work) else np.zeros((0, n))
    nu_all = np.linalg.lstsq(A.T, -grad, rcond=None)[0] if A.size else np.zeros(0)
    nu_eq = nu_all[:m_eq]
    mu_in = np.zeros(A_in.shape[0])
    mu_in[work] = nu_all[m_eq:]
    return x, nu_eq, mu_in, kkt_residual(h, c, A_eq, b_eq, A_in, b_in, x, nu_eq, mu_in)


def kkt_residual(h, c, A_eq, b_eq, A_in, b_in, x, nu_eq, mu_in):
    """Largest violation of stationarity, primal/dual feasibility and complementarity."""
    stat = h * x + c + A_eq.T @ nu_eq + A_in.T @ mu_in
    parts = [np.abs(stat).max(initial=0.0)]
    if A_eq.size:
        parts.append(np.abs(A_eq @ x - b_eq).max())
    if A_in.size:
        slack = b_in - A_in @ x
        parts += [np.maximum(-slack, 0).max(), np.maximum(-mu_in, 0).max(),
                  np.abs(mu_in * slack).max()]
    return float(max(parts))


def _qp_hour(case, load_bus, wind_bus, curtail):
    """Solve one hour with the network model. ``load_bus``/``wind_bus`` are per-bus MW."""
    G = case.n_gen
    lim = np.isfinite(case.limit)
    P = case.ptdf[lim]
    F = case.limit[lim]
    Pg = P[:, case.gen_bus]
    wind_idx = np.flatnonzero(wind_bus > 0) if curtail else np.zeros(0, dtype=int)
    W = wind_idx.size
    avail = wind_bus[wind_idx]
    fixed = wind_bus.copy()
    fixed[wind_idx] = 0.0
    base_flow = P @ (fixed - load_bus)
    Pw = P[:, wind_idx]

    h = np.concatenate([2 * np.where(case.a > 0, case.a, _QP_REG), np.full(W, 2 * _QP_REG)])
    c = np.concatenate([case.b, -2 * _QP_REG * avail])
    A_eq = np.ones((1, G + W))
    b_eq = np.array([load_bus.sum() - fixed.sum()])
    eye = np.eye(G + W)
    Ain = [eye, -eye, np.hstack([Pg, Pw]), -np.hstack([Pg, Pw])]
    bin_ = [np.concatenate([case.g_max, avail]), -np.concatenate([case.g_min, np.zeros(W)]),
            F - base_flow, F + base_flow]
    x, nu, mu, kkt = active_set_qp(h, c, A_eq, b_eq, np.vstack(Ain), np.concatenate(bin_))
    g = np.clip(x[:G], case.g_min, case.g_max)
    used = wind_bus.copy()
    used[wind_idx] = x[G:]
    return g, float(-nu[0]), used, kkt


def _flows(case, g, wind_bus, load_bus):
    inj = wind_bus - load_bus
    for k, bus in enumerate(case.gen_bus):
        inj = inj + np.eye(case.n_bus)[bus] * g[..., k:k + 1]
    return inj @ case.ptdf.T


def _hour_problems(case, hours, wind_bus, curtail):
    """Vectorized solve of hour problems; returns dict of arrays and a list of QP fallbacks."""
    load_bus = case.load[:, hours].T  # (N, n_bus)
    demand = load_bus.sum(axis=-1) - wind_bus.sum(axis=-1)
    gmin_tot, gmax_tot = case.g_min.sum(), case.g_max.sum()
    status = np.zeros(demand.shape, dtype=int)  # 0 ok, 1 infeasible
    status[demand > gmax_tot + BALANCE_TOL] = 1
    used = wind_bus.copy()
    low = demand < gmin_tot - BALANCE_TOL
    if curtail:
        # curtail every farm proportionally down to the units' minimum output
        with np.errstate(invalid="ignore", divide="ignore"):
            keep = np.where(low, (load_bus.sum(-1) - gmin_tot) / wind_bus.sum(-1), 1.0)
        keep = np.clip(np.nan_to_num(keep, nan=1.0), 0.0, 1.0)
        used = wind_bus * keep[:, None]
        status[low & (load_bus.sum(-1) < gmin_tot - BALANCE_TOL)] = 1
        demand = np.where(low, np.maximum(demand + (wind_bus.sum(-1) - used.sum(-1)), gmin_tot), demand)
    else:
        status[low] = 1
    d = np.clip(demand, gmin_tot, gmax_tot)
    g, lam = lambda_dispatch(case.a, case.b, case.g_min, case.g_max, d)
    if curtail:
        lam = np.where(low, 0.0, lam)
    kkt = _lambda_kkt(g, lam, case.a, case.b, case.g_min, case.g_max)
    flows = _flows(case, g, used, load_bus)
    over = np.any(np.abs(flows) > case.limit + FLOW_TOL, axis=-1) & (status == 0)
    for k in np.flatnonzero(over):
        try:
            gk, lk, uk, kk = _qp_hour(case, load_bus[k], wind_bus[k], curtail)
        except Infeasible:
            status[k] = 1
            continue
        g[k], lam[k], used[k], kkt[k] = gk, lk, uk, kk
        flows[k] = _flows(case, gk, uk, load_bus[k])
    cost = np.sum(case.a * g * g + case.b * g, axis=-1)
    return {"g": g, "lam": lam, "flows": flows, "cost": cost, "kkt": kkt,
            "used": used, "status": status, "qp": over}


def _bus_wind(case, wind):
    if isinstance(wind, dict):
        return case.wind_to_bus(wind)
    wind = np.asarray(wind, dtype=float)
    if wind.shape[-1] != case.n_bus:
        raise InvalidInput(f"expected per-bus wind with {case.n_bus} entries")
    return wind


def solve_hour(case, hour, wind=None, curtail=False):
    """Dispatch a single hour (``hour`` in 1..24). ``wind`` is per-bus MW or ``{farm: MW}``."""
    if not 1 <= hour <= HOURS:
        raise InvalidInput("hour must lie in 1..24")
    if wind is None:
        wind_bus = np.zeros(case.n_bus)
    elif isinstance(wind, dict):
        wind_bus = case.wind_to_bus({k: np.full(HOURS, v) if np.ndim(v) == 0 else v for k, v in wind.items()})[hour - 1]
    else:
        wind_bus = _bus_wind(case, wind)
    out = _hour_problems(case, np.array([hour - 1]), wind_bus.reshape(1, -1), curtail)
    if out["status"][0]:
        raise Infeasible("net load cannot be met", hour=hour)
    return HourResult(out["g"][0], float(out["lam"][0]), out["flows"][0], float(out["cost"][0]),
                      float(out["kkt"][0]), out["used"][0], "qp" if out["qp"][0] else "lambda")


def solve_day(case, wind=None, curtail=False, raise_infeasible=True):
    """Dispatch 24 hours; ``wind`` maps farm id to a 24-vector of MW (or is ``(24, n_bus)``)."""
    wind_bus = np.zeros((HOURS, case.n_bus)) if wind is None else _bus_wind(case, wind)
    if wind_bus.shape != (HOURS, case.n_bus):
        raise InvalidInput(f"expected 24 hours of wind, got shape {wind_bus.shape}")
    out = _hour_problems(case, np.arange(HOURS), wind_bus, curtail)
    bad = np.flatnonzero(out["status"])
    if bad.size:
        if raise_infeasible:
            raise Infeasible("net load cannot be met", hour=int(bad[0]) + 1)
        return DispatchResult(np.nan, out["g"].T, out["lam"], out["flows"].T, "infeasible",
                              failed_hour=int(bad[0]) + 1)
    cost = float(out["cost"].sum() + HOURS * case.c.sum())
    return DispatchResult(cost, out["g"].T, out["lam"], out["flows"].T, "optimal",
                          float(out["kkt"].max()))


def daily_costs(case, wind, curtail=False):
    """Daily cost for a batch of scenarios.

    ``wind`` maps farm id to ``(S, 24)`` MW arrays. Returns ``(cost, feasible)``
    arrays of length ``S``; infeasible scenarios get ``nan`` cost.
    """
    wind_bus = case.wind_to_bus(wind)  # (S, 24, n_bus)
    S = wind_bus.shape[0]
    hours = np.tile(np.arange(HOURS), S)
    out = _hour_problems(case, hours, wind_bus.reshape(S * HOURS, case.n_bus), curtail)
    cost = out["cost"].reshape(S, HOURS).sum(axis=1) + HOURS * case.c.sum()
    feasible = ~out["status"].reshape(S, HOURS).any(axis=1)
    return np.where(feasible, cost, np.nan), feasible


def wind_injection(power_curves, kle_bases, latent):
    """Per-farm hourly power from latent coordinates.

    Speeds are reconstructed from the KLE (clamped at zero) and pushed
    through the farm's power curve. ``latent`` maps farm id to a ``(p,)`` or
    ``(S, p)`` array; outputs have matching leading shape with 24 columns.
    """
    out = {}
    for farm, xi in latent.items():
        if farm not in kle_bases or farm not in power_curves:
            raise InvalidInput(f"unknown farm {farm!r}")
        speed = np.maximum(kle_bases[farm].inverse_transform(xi), 0.0)
        out[farm] = power_curves[farm].predict(speed)
    return out
