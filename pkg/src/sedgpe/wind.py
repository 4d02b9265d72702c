"""Wind turbine data: CSV ingestion, hourly farm averages and power curves.

CSV format (UTF-8, header required, rows in any order)::

    timestamp,farm_id,turbine_id,speed_mps,power_mw

``timestamp`` is ISO-8601. A record stamped ``HH:MM`` belongs to hour
``HH + 1`` of its calendar day (hours are numbered 1..24).
"""

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import InsufficientData, InvalidInput, ParseError, SchemaError

HOURS = 24
CSV_COLUMNS = ("timestamp", "farm_id", "turbine_id", "speed_mps", "power_mw")


@dataclass(frozen=True)
class WindFieldRecord:
    timestamp: datetime
    farm_id: str
    turbine_id: str
    speed: float
    power: float


@dataclass(frozen=True)
class WindFieldMatrix:
    """Hourly means for one farm, one row per complete day."""

    farm_id: str
    quantity: str  # "speed" (m/s) or "power" (MW)
    days: tuple
    values: np.ndarray
    dropped_days: tuple = field(default=())

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != HOURS:
            raise InvalidInput(f"field matrix must be n_days x {HOURS}, got {values.shape}")
        if values.shape[0] != len(self.days):
            raise InvalidInput("one day label per row is required")
        if not np.all(np.isfinite(values)):
            raise InvalidInput("field matrix has missing cells")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "days", tuple(self.days))
        object.__setattr__(self, "dropped_days", tuple(self.dropped_days))

    @property
    def n_days(self):
        return self.values.shape[0]

    def to_dict(self):
        return {
            "farm_id": self.farm_id,
            "quantity": self.quantity,
            "days": list(self.days),
            "dropped_days": list(self.dropped_days),
            "values": self.values.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["farm_id"], d["quantity"], d["days"], np.asarray(d["values"]),
                   d.get("dropped_days", ()))


def _parse_number(text, name, line):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"cannot parse {name} {text!r}", line) from None
    if not np.isfinite(value):
        raise ParseError(f"{name} is not finite", line)
    if value < 0:
        raise ParseError(f"{name} is negative ({value})", line)
    return value


def ingest_csv(path, schema=CSV_COLUMNS):
    """Read a wind CSV file into a list of :class:`WindFieldRecord`.

    Raises
    ------
    SchemaError
        If a required column is missing from the header.
    ParseError
        On the first malformed row; ``err.line`` is the 1-based file line.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        missing = [c for c in schema if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        idx = [header.index(c) for c in schema]
        records = []
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
            ts, farm, turbine, speed, power = (row[i].strip() for i in idx)
            try:
                stamp = datetime.fromisoformat(ts)
            except ValueError:
                raise ParseError(f"bad timestamp {ts!r}", line) from None
            if not farm or not turbine:
                raise ParseError("empty farm_id or turbine_id", line)
            records.append(WindFieldRecord(
                stamp, farm, turbine,
                _parse_number(speed, "speed", line),
                _parse_number(power, "power", line),
            ))
    return records


def write_csv(path, records):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow([r.timestamp.isoformat(), r.farm_id, r.turbine_id,
                             f"{r.speed:.4f}", f"{r.power:.5f}"])


def hourly_farm_average(records):
    """Average one farm's records into hourly speed and power matrices.

    Each cell is the mean over all turbines and sub-hour samples in that
    (day, hour). Days missing any hour are dropped and listed in
    ``dropped_days`` of both matrices.
    """
    if not records:
        raise InsufficientData("no records")
    farms = {r.farm_id for r in records}
    if len(farms) != 1:
        raise InvalidInput(f"records span several farms: {sorted(farms)}")
    farm_id = farms.pop()

    sums = defaultdict(lambda: np.zeros((HOURS, 3)))
    for r in records:
        cell = sums[r.timestamp.date().isoformat()][r.timestamp.hour]
        cell += (r.speed, r.power, 1.0)

    days, dropped, speed, power = [], [], [], []
    for day in sorted(sums):
        acc = sums[day]
        if np.any(acc[:, 2] == 0):
            dropped.append(day)
            continue
        days.append(day)
        speed.append(acc[:, 0] / acc[:, 2])
        power.append(acc[:, 1] / acc[:, 2])
    if not days:
        raise InsufficientData(f"farm {farm_id}: no complete days")
    return (
        WindFieldMatrix(farm_id, "speed", days, np.array(speed), dropped),
        WindFieldMatrix(farm_id, "power", days, np.array(power), dropped),
    )


def _best_split(x, y, min_leaf):
    """Exhaustive least-squares split of sorted ``x``. Returns (sse, threshold) or None."""
    n = len(y)
    csum = np.cumsum(y)
    csq = np.cumsum(y * y)
    k = np.arange(min_leaf, n - min_leaf + 1)  # size of the left part
    if k.size == 0:
        return None
    # only split between distinct speeds
    k = k[x[k - 1] < x[np.minimum(k, n - 1)]]
    if k.size == 0:
        return None
    left_sse = csq[k - 1] - csum[k - 1] ** 2 / k
    right_sum = csum[-1] - csum[k - 1]
    right_sse = (csq[-1] - csq[k - 1]) - right_sum**2 / (n - k)
    total = left_sse + right_sse
    best = int(np.argmin(total))
    kb = k[best]
    return float(total[best]), 0.5 * (x[kb - 1] + x[kb])


class PowerCurveTree(RegressorMixin, BaseEstimator):
    """Piecewise-constant wind power curve fitted by least-squares CART.

    Parameters
    ----------
    max_depth : int, default=6
    min_leaf_count : int, default=5
        Minimum number of training points routed to each leaf.

    Attributes
    ----------
    thresholds_, left_, right_, values_ : ndarray
        Flat tree arrays; ``left_[i] == -1`` marks a leaf.
    max_power_ : float
        Largest training power; predictions are clamped to ``[0, max_power_]``.
    """

    def __init__(self, max_depth=6, min_leaf_count=5):
        self.max_depth = max_depth
        self.min_leaf_count = min_leaf_count

    def fit(self, X, y):
        x = np.asarray(X, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        if x.shape != y.shape:
            raise InvalidInput(f"speed and power lengths differ ({x.size} vs {y.size})")
        if self.min_leaf_count < 1 or self.max_depth < 0:
            raise InvalidInput("min_leaf_count must be >= 1 and max_depth >= 0")
        if x.size < 2 * self.min_leaf_count:
            raise InvalidInput(f"need at least {2 * self.min_leaf_count} points")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise InvalidInput("non-finite training data")
        order = np.argsort(x, kind="stable")
        x, y = x[order], y[order]

        thresholds, left, right, values = [], [], [], []

        def grow(lo, hi, depth):
            node = len(values)
            ys = y[lo:hi]
            mean = float(ys.mean())
            thresholds.append(np.nan)
            left.append(-1)
            right.append(-1)
            values.append(mean)
            if depth >= self.max_depth:
                return node
            sse = float(np.sum((ys - mean) ** 2))
            if sse <= 0.0:
                return node
            split = _best_split(x[lo:hi], ys, self.min_leaf_count)
            if split is None or sse - split[0] <= 1e-12 * sse:
                return node
            thr = split[1]
            mid = lo + int(np.searchsorted(x[lo:hi], thr, side="right"))
            thresholds[node] = thr
            left[node] = grow(lo, mid, depth + 1)
            right[node] = grow(mid, hi, depth + 1)
            return node

        grow(0, x.size, 0)
        self.thresholds_ = np.array(thresholds)
        self.left_ = np.array(left, dtype=int)
        self.right_ = np.array(right, dtype=int)
        self.values_ = np.array(values)
        self.max_power_ = float(y.max())
        return self

    @property
    def n_leaves_(self):
        return int(np.sum(self.left_ < 0))

    def leaf_values(self):
        return self.values_[self.left_ < 0]

    def predict(self, X):
        check_is_fitted(self, "values_")
        x = np.asarray(X, dtype=float)
        shape = x.shape
        x = x.reshape(-1)
        node = np.zeros(x.size, dtype=int)
        active = self.left_[node] >= 0
        while np.any(active):
            cur = node[active]
            go_left = x[active] <= self.thresholds_[cur]
            node[active] = np.where(go_left, self.left_[cur], self.right_[cur])
            active = self.left_[node] >= 0
        out = np.clip(self.values_[node], 0.0, self.max_power_)
        return out.reshape(shape)

    def sse(self, X, y):
        return float(np.sum((self.predict(X) - np.asarray(y, dtype=float)) ** 2))

    def to_dict(self):
        check_is_fitted(self, "values_")
        return {
            "max_depth": self.max_depth,
            "min_leaf_count": self.min_leaf_count,
            "thresholds": [None if np.isnan(t) else float(t) for t in self.thresholds_],
            "left": self.left_.tolist(),
            "right": self.right_.tolist(),
            "values": self.values_.tolist(),
            "max_power": self.max_power_,
        }

    @classmethod
    def from_dict(cls, d):
        tree = cls(d["max_depth"], d["min_leaf_count"])
        tree.thresholds_ = np.array([np.nan if t is None else t for t in d["thresholds"]], dtype=float)
        tree.left_ = np.array(d["left"], dtype=int)
        tree.right_ = np.array(d["right"], dtype=int)
        tree.values_ = np.array(d["values"], dtype=float)
        tree.max_power_ = float(d["max_power"])
        return tree


def fit_power_curve(speed, power, max_depth=6, min_leaf_count=5):
    return PowerCurveTree(max_depth, min_leaf_count).fit(speed, power)


def predict_power(tree, speed):
    return tree.predict(speed)
