"""Survival data containers, simulation scenarios, time grids and CSV ingestion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidArgumentError, ParseError


@dataclass(frozen=True)
class Observation:
    x: tuple
    time: float
    event: bool

    def __post_init__(self):
        if not (math.isfinite(self.time) and self.time >= 0):
            raise InvalidArgumentError(f"observed time must be finite and >= 0, got {self.time}")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Right-censored survival data stored column-wise.

    ``X`` is ``(n, p)``, ``time`` the observed times ``min(T, C, tau)`` and
    ``event`` the failure indicators. Arrays are made read-only on construction.
    A dataset without any failure is allowed to exist (so it can be loaded and
    inspected) but every fitting routine rejects it.
    """

    X: np.ndarray
    time: np.ndarray
    event: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise InvalidArgumentError("covariate matrix must be two-dimensional")
        time = np.ascontiguousarray(self.time, dtype=np.float64).reshape(-1)
        event = np.ascontiguousarray(self.event, dtype=bool).reshape(-1)
        n = X.shape[0]
        if time.shape[0] != n or event.shape[0] != n:
            raise InvalidArgumentError("X, time and event must have the same number of rows")
        if X.shape[1] < 1:
            raise InvalidArgumentError("need at least one covariate")
        if not np.all(np.isfinite(time)) or np.any(time < 0):
            raise InvalidArgumentError("observed times must be finite and nonnegative")
        if not np.all(np.isfinite(X)):
            raise InvalidArgumentError("covariates must be finite")
        for arr in (X, time, event):
            arr.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)
        names = tuple(self.names) or tuple(f"x{j + 1}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise InvalidArgumentError("one name per covariate column required")
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    def __len__(self):
        return self.n

    @property
    def observations(self) -> list[Observation]:
        return [
            Observation(tuple(self.X[i]), float(self.time[i]), bool(self.event[i]))
            for i in range(self.n)
        ]

    @classmethod
    def from_observations(cls, observations: Sequence[Observation], names=()) -> "Dataset":
        if not observations:
            raise InvalidArgumentError("empty observation list")
        p = len(observations[0].x)
        if any(len(o.x) != p for o in observations):
            raise InvalidArgumentError("all observations must share the covariate dimension")
        X = np.array([o.x for o in observations], dtype=np.float64)
        return cls(X, [o.time for o in observations], [o.event for o in observations], names)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.time[idx], self.event[idx], self.names)

    def drop(self, idx) -> "Dataset":
        keep = np.ones(self.n, dtype=bool)
        keep[np.asarray(idx, dtype=np.int64)] = False
        return self.subset(np.flatnonzero(keep))


@dataclass(frozen=True, eq=False)
class TimeGrid:
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1)
        if pts.size < 2:
            raise InvalidArgumentError("a time grid needs at least two points")
        if not np.all(np.isfinite(pts)) or pts[0] < 0:
            raise InvalidArgumentError("grid points must be finite and nonnegative")
        if np.any(np.diff(pts) <= 0):
            raise InvalidArgumentError("grid points must be strictly increasing")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def P(self) -> int:
        return self.points.size

    def __len__(self):
        return self.P

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.points, other.points)

    __hash__ = None


def make_grid(tau: float, P: int) -> TimeGrid:
    """Grid ``(0, tau/P, ..., (P-1) tau / P)``."""
    if not (tau > 0 and math.isfinite(tau)):
        raise InvalidArgumentError(f"tau must be positive, got {tau}")
    if int(P) != P or P < 2:
        raise InvalidArgumentError(f"P must be an integer >= 2, got {P}")
    return TimeGrid(np.arange(int(P), dtype=np.float64) * tau / P)


# -- simulation scenarios -----------------------------------------------------

N_COVARIATES = 6


@dataclass(frozen=True)
class ScenarioSpec:
    """Failure-time model driven by the first covariate.

    ``lognormal_param`` selects how the log-normal rows are read: ``"log"``
    treats the listed mean/sd as ``exp`` of the location/scale of log T,
    ``"moments"`` treats them as the mean/sd of T itself.
    """

    id: int
    family: str
    tau: float
    censor_rate: float
    failure_rate: float
    lognormal_param: str = "log"

    def draw_failure(self, x1: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.family == "gamma":
            return rng.gamma(shape=2.0 * x1, scale=1.0)
        if self.family == "weibull":
            return rng.weibull(5.0 * x1)
        if self.family == "lognormal":
            mu, sigma = self._lognormal_params(x1)
            return np.exp(rng.normal(mu, sigma))
        raise InvalidArgumentError(f"unknown family {self.family!r}")

    def _lognormal_params(self, x1):
        if self.id == 2:
            mean_exp, sd_exp = np.full_like(x1, 1.0), x1
        else:
            mean_exp, sd_exp = x1 - 0.5, np.ones_like(x1)
        if self.lognormal_param == "log":
            return mean_exp, sd_exp
        if self.lognormal_param == "moments":
            m, s = np.exp(mean_exp), np.exp(sd_exp)
            s2 = np.log1p((s / m) ** 2)
            return np.log(m) - s2 / 2, np.sqrt(s2)
        raise InvalidArgumentError(f"unknown log-normal parameterization {self.lognormal_param!r}")

    def with_options(self, **kw) -> "ScenarioSpec":
        return ScenarioSpec(**{**self.__dict__, **kw})


SCENARIOS = {
    1: ScenarioSpec(1, "gamma", tau=2.5, censor_rate=0.25, failure_rate=0.76),
    2: ScenarioSpec(2, "lognormal", tau=7.5, censor_rate=0.10, failure_rate=0.73),
    3: ScenarioSpec(3, "lognormal", tau=7.5, censor_rate=0.10, failure_rate=0.85),
    4: ScenarioSpec(4, "weibull", tau=2.0, censor_rate=0.25, failure_rate=0.77),
}


def get_scenario(scenario_id: int, lognormal_param: str = "log") -> ScenarioSpec:
    try:
        spec = SCENARIOS[int(scenario_id)]
    except (KeyError, ValueError, TypeError):
        raise InvalidArgumentError(f"unknown scenario id {scenario_id!r}; expected 1-4") from None
    if lognormal_param != spec.lognormal_param:
        spec = spec.with_options(lognormal_param=lognormal_param)
    return spec


def simulate_scenario(spec: ScenarioSpec, n: int, seed: int, *,
                      censor_rate: float | None = None,
                      delta_rule: str = "window") -> Dataset:
    """Draw ``n`` observations from a simulation scenario.

    Covariates are six independent Uniform(0, 1) draws; only the first one
    drives the failure time. ``delta_rule="window"`` marks a failure as
    observed only when it happens before both censoring and ``tau``;
    ``"censor_only"`` uses ``T <= C`` regardless of ``tau``.
    """
    if not isinstance(spec, ScenarioSpec) or spec.id not in SCENARIOS:
        raise InvalidArgumentError(f"unknown scenario {spec!r}")
    if int(n) != n or n < 1:
        raise InvalidArgumentError(f"n must be a positive integer, got {n}")
    lam = spec.censor_rate if censor_rate is None else censor_rate
    if not lam > 0:
        raise InvalidArgumentError("censoring rate must be positive")
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(int(n), N_COVARIATES))
    # small gamma/weibull shapes underflow to exactly 0; T is strictly positive
    T = np.maximum(spec.draw_failure(X[:, 0], rng), np.finfo(np.float64).tiny)
    C = rng.exponential(1.0 / lam, size=int(n))
    y = np.minimum(np.minimum(T, C), spec.tau)
    if delta_rule == "window":
        event = T <= np.minimum(C, spec.tau)
    elif delta_rule == "censor_only":
        event = T <= C
    else:
        raise InvalidArgumentError(f"unknown delta rule {delta_rule!r}")
    return Dataset(X, y, event)


# -- CSV ingestion ------------------------------------------------------------

_TRUE = {"1", "true", "t", "yes", "dead", "event"}
_FALSE = {"0", "false", "f", "no", "censored", "alive"}


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for :func:`load_csv`.

    ``categorical`` maps a covariate column to its ordered levels; a level's
    code is its 1-based position. Pass an empty sequence to use the sorted
    distinct values found in the file. Codes are treated as ordered numbers
    when splitting.
    """

    time: str
    status: str
    covariates: tuple
    categorical: Mapping[str, Sequence[str]] = field(default_factory=dict)
    delimiter: str = ","


VETERAN_SCHEMA = CsvSchema(
    time="time",
    status="status",
    covariates=("trt", "celltype", "karno", "diagtime", "age", "prior"),
    categorical={"celltype": ("squamous", "smallcell", "adeno", "large")},
)


def _parse_status(raw, row):
    v = raw.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    try:
        f = float(v)
    except ValueError:
        raise ParseError(f"cannot read status value {raw!r}", row) from None
    if f in (0.0, 1.0):
        return f == 1.0
    raise ParseError(f"status must be 0/1, got {raw!r}", row)


def load_csv(path, schema: CsvSchema) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path} is empty") from None
        rows = [r for r in reader if any(c.strip() for c in r)]
    needed = [schema.time, schema.status, *schema.covariates]
    missing = [c for c in needed if c not in header]
    if missing:
        raise ParseError(f"missing column(s) {', '.join(missing)} in {path}")
    if not rows:
        raise ParseError(f"{path} has a header but no data rows")
    pos = {name: i for i, name in enumerate(header)}

    levels = {}
    for col, lv in schema.categorical.items():
        if lv:
            levels[col] = {v: i + 1 for i, v in enumerate(lv)}
        else:
            seen = sorted({r[pos[col]].strip() for r in rows if len(r) > pos[col]})
            levels[col] = {v: i + 1 for i, v in enumerate(seen)}

    X = np.empty((len(rows), len(schema.covariates)))
    time = np.empty(len(rows))
    event = np.empty(len(rows), dtype=bool)
    for i, r in enumerate(rows):
        line = i + 2  # header is line 1
        if len(r) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(r)}", line)
        try:
            time[i] = float(r[pos[schema.time]])
        except ValueError:
            raise ParseError(f"bad time value {r[pos[schema.time]]!r}", line) from None
        if not (math.isfinite(time[i]) and time[i] >= 0):
            raise ParseError(f"time must be finite and >= 0, got {time[i]}", line)
        event[i] = _parse_status(r[pos[schema.status]], line)
        for j, col in enumerate(schema.covariates):
            raw = r[pos[col]].strip()
            if col in levels:
                if raw not in levels[col]:
                    raise ParseError(f"unknown level {raw!r} for column {col}", line)
                X[i, j] = levels[col][raw]
            else:
                try:
                    X[i, j] = float(raw)
                except ValueError:
                    raise ParseError(f"non-numeric value {raw!r} in column {col}", line) from None
    return Dataset(X, time, event, tuple(schema.covariates))
