"""Seeded synthetic wind data shaped like three farms of January data.

Each farm has three turbines sampled hourly on 93 days (January of three
consecutive years). Hub-height speed for farm ``f``, day ``d``, hour ``h``::

    base_f + daily_offset[f, d]
           + amplitude_f * (1 + swing[f, d]) * sin(2 pi (h - peak_f) / 24)
           + ramp[f, d] * (h - 12.5) / 12
           + AR(1) noise

The daily offsets of farms ``SE1`` and ``SE2`` share a common factor, so
their leading latent coordinates are strongly dependent; ``LV`` is
independent of both. Turbine power follows a cubic curve between cut-in
and rated speed plus a little measurement noise.
"""

from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .wind import HOURS, WindFieldRecord, write_csv

FARMS = {
    # base m/s, offset std, diurnal amplitude, peak hour, ramp std, AR std
    "LV": (8.0, 1.5, 2.2, 15.0, 1.6, 0.4),
    "SE1": (7.5, 2.0, 1.2, 13.0, 0.8, 0.2),
    "SE2": (7.8, 2.0, 1.0, 14.0, 0.8, 0.2),
}
SHARED = {"SE1": 0.85, "SE2": 0.85}  # loading on the common daily factor
YEARS = (2004, 2005, 2006)
TURBINES = 3
CUT_IN, RATED_SPEED, CUT_OUT, RATED_MW = 3.0, 12.5, 25.0, 1.5


def turbine_power(speed):
    frac = np.clip((speed - CUT_IN) / (RATED_SPEED - CUT_IN), 0.0, 1.0) ** 3
    return np.where(speed >= CUT_OUT, 0.0, RATED_MW * frac)


def january_days(years=YEARS):
    return [datetime(y, 1, 1) + timedelta(days=k) for y in years for k in range(31)]


def synthetic_speeds(seed=2004, n_days=93):
    """Hourly farm-level speeds, ``{farm: (n_days, 24)}``."""
    rng = np.random.default_rng(seed)
    hours = np.arange(1, HOURS + 1)
    common = rng.standard_normal(n_days)
    out = {}
    for farm, (base, off_sd, amp, peak, ramp_sd, ar_sd) in FARMS.items():
        load = SHARED.get(farm, 0.0)
        z = load * common + np.sqrt(1 - load**2) * rng.standard_normal(n_days)
        offset = off_sd * z
        swing = 0.3 * rng.standard_normal(n_days)
        ramp = ramp_sd * rng.standard_normal(n_days)
        noise = np.zeros((n_days, HOURS))
        eps = rng.standard_normal((n_days, HOURS))
        noise[:, 0] = ar_sd * eps[:, 0]
        for h in range(1, HOURS):
            noise[:, h] = 0.8 * noise[:, h - 1] + ar_sd * np.sqrt(1 - 0.64) * eps[:, h]
        diurnal = np.sin(2 * np.pi * (hours - peak) / HOURS)
        speed = (base + offset[:, None] + amp * (1 + swing[:, None]) * diurnal
                 + ramp[:, None] * (hours - 12.5) / 12 + noise)
        out[farm] = np.maximum(speed, 0.0)
    return out


def synthetic_records(seed=2004, years=YEARS):
    """Turbine-level records for every farm, ``{farm: [WindFieldRecord, ...]}``."""
    days = january_days(years)
    speeds = synthetic_speeds(seed, len(days))
    rng = np.random.default_rng(seed + 1)
    records = {}
    for farm, field in speeds.items():
        rows = []
        for d, day in enumerate(days):
            for h in range(HOURS):
                stamp = day + timedelta(hours=h)
                for t in range(TURBINES):
                    v = max(field[d, h] + 0.1 * rng.standard_normal(), 0.0)
                    p = float(np.clip(turbine_power(v) + 0.02 * rng.standard_normal(), 0.0, RATED_MW))
                    rows.append(WindFieldRecord(stamp, farm, f"{farm}-T{t + 1}", v, p))
        records[farm] = rows
    return records


CONFIG_TEMPLATE = """\
# Synthetic three-farm study on the bundled 5-bus case.
[paths]
wind = [{wind}]
case = "builtin:case5"
output_dir = "out"

[wind-data]
max_depth = 6
min_leaf_count = 5

[kle]
variance_target = 0.95

[latent-stats]
dependency_threshold = 0.5
reference_pool = 10000

[gpe]
basis = "pure-quadratic"
kernel = "SE"
n_restarts = 5

[pipeline]
train_size = 100
mc_size = 8000
seed = 0
with_mc = false
curtailment = false
"""


def write_fixture(out_dir, seed=2004):
    """Write one CSV per farm plus a ready-to-run ``config.toml``; returns the CSV paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for farm, rows in synthetic_records(seed).items():
        path = out_dir / f"{farm}.csv"
        write_csv(path, rows)
        paths.append(path)
    wind = ", ".join(f'"{p.name}"' for p in paths)
    (out_dir / "config.toml").write_text(CONFIG_TEMPLATE.format(wind=wind), encoding="utf-8")
    return paths
