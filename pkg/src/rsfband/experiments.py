"""Simulation studies and the real-data workflow.

A coverage study repeats, for ``R`` independent datasets: simulate, fit a
matched-pair forest, estimate the covariance at each target point, and build
bands with and without diagonal smoothing. The reference curve is the mean
forest prediction across replications, so predictions are kept for a second
pass that scores coverage.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from . import io
from .band import BandParams, band_from_covariance, nearest_pd, smooth_diagonal
from .covariance import estimate_sigma
from .data import (CsvSchema, Dataset, VETERAN_SCHEMA, get_scenario, load_csv, make_grid,
                   simulate_scenario)
from .errors import FitError, InvalidArgumentError, NumericalError
from .forest import ForestParams, fit_forest, mean_curve
from .tree import TreeParams

log = logging.getLogger(__name__)

METHODS = ("projected", "smoothed")
MAX_RETRIES = 3
_PURPOSE = {"data": 0, "forest": 1, "band": 2}


def default_targets(p: int = 6) -> list[list[float]]:
    out = []
    for x1 in (0.25, 0.5, 0.75):
        x = [0.5] * p
        x[0] = x1
        out.append(x)
    return out


@dataclass
class ExperimentConfig:
    """Settings for every harness command; defaults are the desk-scale study."""

    scenario: int | None = 1
    csv: str | None = None
    n: int = 200
    k: int = 100
    B: int = 2000
    M: int = 1000
    P: int = 100
    R: int = 200
    targets: list = field(default_factory=default_targets)
    mtry: int = 3
    min_node_size: int = 15
    alpha: float = 0.05
    smoothing: bool = True
    seed: int | None = None
    out: str = "results"
    n_jobs: int = 1
    tau: float | None = None
    delta_rule: str = "window"
    lognormal_param: str = "log"
    critical: str = "order"
    bandwidth_rule: str = "times"
    save_bands: bool = True
    # CSV schema (real data)
    time_col: str = VETERAN_SCHEMA.time
    status_col: str = VETERAN_SCHEMA.status
    covariates: list = field(default_factory=lambda: list(VETERAN_SCHEMA.covariates))
    categorical: dict = field(default_factory=lambda: {
        k: list(v) for k, v in VETERAN_SCHEMA.categorical.items()})
    delimiter: str = ","

    def validate(self, p: int | None = None):
        if self.scenario is None and self.csv is None:
            raise InvalidArgumentError("config needs a scenario or a csv source")
        if self.scenario is not None:
            get_scenario(self.scenario, self.lognormal_param)
        if self.R < 1:
            raise InvalidArgumentError("R must be >= 1")
        if self.k < 2 or self.B < 1:
            raise InvalidArgumentError("need k >= 2 and B >= 1")
        if self.csv is None and 2 * self.k > self.n:
            raise InvalidArgumentError(f"k={self.k} exceeds n/2={self.n / 2:g}")
        if p is not None:
            for x in self.targets:
                if len(x) != p:
                    raise InvalidArgumentError(f"target {x} does not have dimension {p}")
        self.band_params()
        TreeParams(self.mtry, self.min_node_size)
        return self

    def band_params(self, smoothing: bool | None = None) -> BandParams:
        return BandParams(alpha=self.alpha, M=self.M,
                          smoothing=self.smoothing if smoothing is None else smoothing,
                          critical=self.critical, bandwidth_rule=self.bandwidth_rule)

    def tree_params(self) -> TreeParams:
        return TreeParams(self.mtry, self.min_node_size)

    def schema(self) -> CsvSchema:
        return CsvSchema(self.time_col, self.status_col, tuple(self.covariates),
                         {k: tuple(v) for k, v in self.categorical.items()}, self.delimiter)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        keep = {k: v for k, v in self.to_dict().items() if k not in ("out", "n_jobs")}
        return hashlib.sha256(json.dumps(keep, sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidArgumentError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_dict(read_config_file(path))


def read_config_file(path) -> dict:
    """Raw key/value mapping from a ``.json`` or ``.toml`` config file."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".toml":
        if sys.version_info >= (3, 11):
            import tomllib
        else:
            import tomli as tomllib
        try:
            return tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise InvalidArgumentError(f"cannot parse config {path}: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"cannot parse config {path}: {exc}") from None


def derive_seed(seed: int, *keys: int) -> int:
    ss = np.random.SeedSequence([int(seed) % 2**63, *keys])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass
class TargetResult:
    ub: np.ndarray
    raw_diag: np.ndarray
    projected_diag: np.ndarray
    smoothed_diag: np.ndarray
    bands: dict  # method -> ConfidenceBand

    @property
    def neg_fraction(self) -> float:
        return float(np.mean(self.raw_diag < 0))


@dataclass
class Replication:
    index: int
    attempts: int
    targets: list  # TargetResult per target, empty when failed
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def analyze_forest(forest, targets, grid, cfg: ExperimentConfig, band_seed: int) -> list:
    curves = forest.tree_curves_many(np.asarray(targets, dtype=np.float64), grid)
    out = []
    for m in range(curves.shape[0]):
        ub = mean_curve(curves[m])
        raw = estimate_sigma(curves[m], ub, grid)
        params = cfg.band_params()
        projected = nearest_pd(raw, params.pd_floor)
        smoothed = smooth_diagonal(projected, grid, True, params.bandwidth_rule, params.pd_floor)
        seed_m = derive_seed(band_seed, m)
        bands = {
            "projected": band_from_covariance(ub, projected, params, seed_m, grid),
            "smoothed": band_from_covariance(ub, smoothed, params, seed_m, grid),
        }
        out.append(TargetResult(ub, raw.diagonal, projected.diagonal, smoothed.diagonal, bands))
    return out


def run_replication(cfg: ExperimentConfig, r: int, grid) -> Replication:
    spec = get_scenario(cfg.scenario, cfg.lognormal_param)
    last = None
    for attempt in range(MAX_RETRIES + 1):
        try:
            data = simulate_scenario(spec, cfg.n, derive_seed(cfg.seed, r, attempt, _PURPOSE["data"]),
                                     delta_rule=cfg.delta_rule)
            fp = ForestParams(cfg.k, cfg.B, cfg.tree_params(),
                              derive_seed(cfg.seed, r, attempt, _PURPOSE["forest"]))
            forest = fit_forest(data, fp)
            res = analyze_forest(forest, cfg.targets, grid, cfg,
                                 derive_seed(cfg.seed, r, attempt, _PURPOSE["band"]))
            return Replication(r, attempt + 1, res)
        except (FitError, NumericalError) as exc:
            last = f"{type(exc).__name__}: {exc}"
            log.debug("replication %d attempt %d failed: %s", r, attempt, exc)
    return Replication(r, MAX_RETRIES + 1, [], last)


@dataclass
class CoverageReport:
    config: ExperimentConfig
    grid_points: np.ndarray
    lambda0: np.ndarray                # (m, P)
    coverage: dict                     # method -> (m,) simultaneous coverage
    pointwise: dict                    # method -> (m, P)
    neg_fraction: np.ndarray           # (R_ok, m) per-replication negative-diagonal share
    neg_pointwise: np.ndarray          # (m, P) share of replications with negative diagonal
    ub_sample_var: np.ndarray          # (m, P) across-replication variance of the prediction
    mean_diag: dict                    # stage -> (m, P)
    var_diag: dict                     # stage -> (m, P) across-replication variance
    replications: list
    n_failed: int

    @property
    def ok_replications(self) -> list:
        return [r for r in self.replications if r.ok]


def _collect(cfg, grid, reps) -> CoverageReport:
    ok = [r for r in reps if r.ok]
    if not ok:
        raise NumericalError("every replication failed")
    m = len(cfg.targets)
    ub = np.array([[t.ub for t in r.targets] for r in ok])            # (R, m, P)
    lambda0 = ub.mean(axis=0)
    coverage, pointwise = {}, {}
    for method in METHODS:
        inside = np.array([[t.bands[method].contains_pointwise(lambda0[j])
                            for j, t in enumerate(r.targets)] for r in ok])  # (R, m, P)
        pointwise[method] = inside.mean(axis=0)
        coverage[method] = inside.all(axis=2).mean(axis=0)
    diags = {s: np.array([[getattr(t, f"{s}_diag") for t in r.targets] for r in ok])
             for s in ("raw", "projected", "smoothed")}
    ddof = 1 if len(ok) > 1 else 0
    return CoverageReport(
        config=cfg, grid_points=grid.points.copy(), lambda0=lambda0,
        coverage=coverage, pointwise=pointwise,
        neg_fraction=np.array([[t.neg_fraction for t in r.targets] for r in ok]).reshape(len(ok), m),
        neg_pointwise=(diags["raw"] < 0).mean(axis=0),
        ub_sample_var=ub.var(axis=0, ddof=ddof),
        mean_diag={s: d.mean(axis=0) for s, d in diags.items()},
        var_diag={s: d.var(axis=0, ddof=ddof) for s, d in diags.items()},
        replications=reps, n_failed=len(reps) - len(ok))


def _grid_for(cfg):
    tau = cfg.tau if cfg.tau is not None else get_scenario(cfg.scenario).tau
    return make_grid(tau, cfg.P)


def run_coverage_study(cfg: ExperimentConfig, progress=None) -> CoverageReport:
    if cfg.seed is None:
        raise InvalidArgumentError("a seed is required for study commands")
    cfg.validate(p=6)
    grid = _grid_for(cfg)

    def one(r):
        rep = run_replication(cfg, r, grid)
        if progress is not None:
            progress(rep)
        return rep

    if cfg.n_jobs > 1:
        with ThreadPoolExecutor(cfg.n_jobs) as ex:
            reps = list(ex.map(one, range(cfg.R)))
    else:
        reps = [one(r) for r in range(cfg.R)]
    failed = sum(not r.ok for r in reps)
    if failed:
        log.warning("%d of %d replications failed and were excluded", failed, cfg.R)
    return _collect(cfg, grid, reps)


def run_b_sweep(cfg: ExperimentConfig, b_values, progress=None) -> dict:
    """Coverage study per number of tree pairs; same datasets for every ``B``."""
    b_values = [int(b) for b in b_values]
    if not b_values:
        raise InvalidArgumentError("b_values is empty")
    return {B: run_coverage_study(dataclasses.replace(cfg, B=B), progress) for B in b_values}


# -- writing reports -----------------------------------------------------------

def _versions():
    return {"python": platform.python_version(), "numpy": np.__version__,
            "numba": numba.__version__}


def _manifest(cfg, kind, extra=None):
    return {"kind": kind, "config": cfg.to_dict(), "config_hash": cfg.digest(),
            "seed": cfg.seed, "versions": _versions(), **(extra or {})}


def write_coverage_report(report: CoverageReport, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = report.config
    t = report.grid_points
    m = len(cfg.targets)
    n_ok = len(report.ok_replications)
    io.write_table(out / "coverage.csv",
                   ["target", "x1", "method", "coverage", "n_replications", "n_failed"],
                   [(j, cfg.targets[j][0], meth, report.coverage[meth][j], n_ok, report.n_failed)
                    for j in range(m) for meth in METHODS])
    io.write_table(out / "pointwise.csv", ["target", "method", "t", "coverage"],
                   [(j, meth, t[p], report.pointwise[meth][j, p])
                    for j in range(m) for meth in METHODS for p in range(t.size)])
    io.write_table(out / "lambda0.csv", ["target", "t", "lambda0"],
                   [(j, t[p], report.lambda0[j, p]) for j in range(m) for p in range(t.size)])
    io.write_table(out / "variance.csv",
                   ["target", "t", "ub_sample_var", "mean_raw", "mean_projected",
                    "mean_smoothed", "var_projected", "neg_fraction"],
                   [(j, t[p], report.ub_sample_var[j, p], report.mean_diag["raw"][j, p],
                     report.mean_diag["projected"][j, p], report.mean_diag["smoothed"][j, p],
                     report.var_diag["projected"][j, p], report.neg_pointwise[j, p])
                    for j in range(m) for p in range(t.size)])
    io.write_table(out / "negvar.csv", ["replication", "target", "neg_fraction"],
                   [(r.index, j, tr.neg_fraction)
                    for r in report.ok_replications for j, tr in enumerate(r.targets)])
    io.write_table(out / "replications.csv", ["replication", "attempts", "ok", "error"],
                   [(r.index, r.attempts, r.ok, r.error or "") for r in report.replications])
    if cfg.save_bands:
        io.write_table(out / "bands.csv",
                       ["replication", "target", "method", "t", "center", "lower", "upper",
                        "s", "zeta"],
                       [(r.index, j, meth, t[p], b.center[p], b.lower[p], b.upper[p], b.s[p],
                         b.zeta)
                        for r in report.ok_replications for j, tr in enumerate(r.targets)
                        for meth in METHODS for b in (tr.bands[meth],) for p in range(t.size)])
    io.write_json(out / "manifest.json", _manifest(cfg, "coverage", {
        "n_failed": report.n_failed,
        "files": sorted(f.name for f in out.glob("*.csv"))}))
    return out


def write_b_sweep(reports: dict, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, curves = [], []
    cfg = None
    for B, rep in reports.items():
        cfg = rep.config
        for j, x in enumerate(cfg.targets):
            rows.append((B, j, x[0], rep.neg_fraction[:, j].mean(),
                         rep.coverage["projected"][j], rep.coverage["smoothed"][j],
                         rep.var_diag["projected"][j].mean(), len(rep.ok_replications),
                         rep.n_failed))
            for p, tp in enumerate(rep.grid_points):
                curves.append((B, j, tp, rep.neg_pointwise[j, p], rep.var_diag["projected"][j, p]))
    io.write_table(out / "bsweep.csv",
                   ["B", "target", "x1", "neg_fraction", "coverage_projected",
                    "coverage_smoothed", "mean_var_projected", "n_replications", "n_failed"],
                   rows)
    io.write_table(out / "bsweep_curves.csv",
                   ["B", "target", "t", "neg_fraction", "var_projected"], curves)
    io.write_json(out / "manifest.json",
                  _manifest(cfg, "bsweep", {"b_values": list(reports)}))
    return out


# -- real data -----------------------------------------------------------------

def run_real_data(cfg: ExperimentConfig, held_out, out_dir=None) -> dict:
    """Fit without the held-out rows (1-based ids) and band each held-out subject."""
    if cfg.csv is None:
        raise InvalidArgumentError("real-data workflow needs a csv source")
    if cfg.seed is None:
        raise InvalidArgumentError("a seed is required")
    held_out = [int(h) for h in held_out]
    if not held_out:
        raise InvalidArgumentError("no held-out subjects given; nothing to predict")
    data = load_csv(cfg.csv, cfg.schema())
    bad = [h for h in held_out if not 1 <= h <= data.n]
    if bad or len(set(held_out)) != len(held_out):
        raise InvalidArgumentError(f"invalid held-out ids {bad or held_out} for n={data.n}")
    idx = np.array(held_out) - 1
    train = data.drop(idx)
    k = cfg.k if 2 * cfg.k <= train.n else train.n // 2
    tau = cfg.tau if cfg.tau is not None else float(train.time.max())
    grid = make_grid(tau, cfg.P)
    cfg.validate(p=data.p)
    forest = fit_forest(train, ForestParams(k, cfg.B, cfg.tree_params(),
                                            derive_seed(cfg.seed, 0, _PURPOSE["forest"])))
    targets = data.X[idx]
    results = analyze_forest(forest, targets, grid, cfg,
                             derive_seed(cfg.seed, 0, _PURPOSE["band"]))
    method = "smoothed" if cfg.smoothing else "projected"
    out = {h: res.bands[method] for h, res in zip(held_out, results)}
    if out_dir is not None:
        out_dir = Path(out_dir)
        for h, res in zip(held_out, results):
            row = data.X[h - 1]
            io.save_band(out_dir / f"subject_{h}.csv", res.bands[method],
                         subject=h, observed_time=float(data.time[h - 1]),
                         event=bool(data.event[h - 1]),
                         covariates=dict(zip(data.names, map(float, row))),
                         neg_fraction=res.neg_fraction, k=k, B=cfg.B, tau=tau)
        io.write_json(out_dir / "manifest.json", _manifest(cfg, "real", {
            "held_out": held_out, "n_train": train.n, "k": k, "tau": tau}))
    return out


def fit_and_band(data: Dataset, cfg: ExperimentConfig, grid) -> list:
    """Single fit on ``data`` with bands at ``cfg.targets``; used by the ``fit`` command."""
    if 2 * cfg.k > data.n:
        raise InvalidArgumentError(f"k={cfg.k} exceeds n/2={data.n / 2:g}")
    forest = fit_forest(data, ForestParams(cfg.k, cfg.B, cfg.tree_params(),
                                           derive_seed(cfg.seed, 0, _PURPOSE["forest"])))
    return analyze_forest(forest, cfg.targets, grid, cfg, derive_seed(cfg.seed, 0, _PURPOSE["band"]))
