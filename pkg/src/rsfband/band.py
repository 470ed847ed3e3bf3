"""Simultaneous confidence bands from a raw covariance estimate.

Pipeline: clip the spectrum to get a positive definite matrix, optionally
smooth its diagonal over time, draw Gaussian curves with that covariance, and
take the sup-norm quantile of the standardized deviations as critical value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .covariance import CovarianceEstimate
from .data import TimeGrid
from .errors import InvalidArgumentError, NumericalError

PD_REL_FLOOR = 1e-8
# diagonal entries within this many floors of zero are treated as exact zeros
ZERO_VARIANCE_FLOORS = 10.0


@dataclass(frozen=True)
class BandParams:
    alpha: float = 0.05
    M: int = 1000
    smoothing: bool = True
    pd_floor: float = PD_REL_FLOOR
    c_bounds: tuple = (0.0, 10.0)
    c_step: float = 1e-3
    critical: str = "order"        # "order" statistic or Algorithm-style "grid" scan
    bandwidth_rule: str = "times"  # dispersion of grid times, or of the diagonal "values"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidArgumentError(f"alpha must lie in (0, 1), got {self.alpha}")
        if int(self.M) != self.M or self.M < 100:
            raise InvalidArgumentError(f"M must be an integer >= 100, got {self.M}")
        if self.pd_floor < 0:
            raise InvalidArgumentError("pd_floor must be nonnegative")
        if self.critical not in ("order", "grid"):
            raise InvalidArgumentError(f"unknown critical-value method {self.critical!r}")
        if self.bandwidth_rule not in ("times", "values"):
            raise InvalidArgumentError(f"unknown bandwidth rule {self.bandwidth_rule!r}")
        c1, c2 = self.c_bounds
        if not (0 <= c1 < c2) or self.c_step <= 0:
            raise InvalidArgumentError("need 0 <= c1 < c2 and c_step > 0")


def pd_floor(matrix, rel: float = PD_REL_FLOOR) -> float:
    lam_max = float(np.linalg.eigvalsh(np.asarray(matrix))[-1])
    return rel * max(1.0, lam_max)


def _eigh(m):
    try:
        return np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(m) if np.all(np.isfinite(m)) else float("nan")
        raise NumericalError(f"eigendecomposition failed (condition number {cond:.3e}): {exc}")


def nearest_pd(sigma: CovarianceEstimate, rel_floor: float = PD_REL_FLOOR,
               stage: str = "projected") -> CovarianceEstimate:
    """Frobenius-nearest positive semidefinite matrix with eigenvalues floored.

    Eigenvalues below ``rel_floor * max(1, lambda_max)`` are raised to that
    floor. A matrix that already clears the floor is returned unchanged.
    """
    m = np.asarray(sigma.matrix)
    if not np.all(np.isfinite(m)):
        raise NumericalError("covariance matrix contains non-finite entries")
    lam, V = _eigh(m)
    floor = rel_floor * max(1.0, float(lam[-1]))
    if lam[0] >= floor:
        return CovarianceEstimate(m, stage, sigma.grid)
    lam = np.maximum(lam, floor)
    out = (V * lam) @ V.T
    return CovarianceEstimate(out, stage, sigma.grid)


def silverman_bandwidth(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    sd = values.std(ddof=1)
    q75, q25 = np.percentile(values, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return 0.9 * spread * values.size ** (-0.2)


def nadaraya_watson(x, y, h: float) -> np.ndarray:
    """Gaussian-kernel regression of ``y`` on ``x`` evaluated at ``x``."""
    x = np.asarray(x, dtype=np.float64)
    w = np.exp(-0.5 * ((x[:, None] - x[None, :]) / h) ** 2)
    return (w @ np.asarray(y, dtype=np.float64)) / w.sum(axis=1)


def smooth_diagonal(sigma: CovarianceEstimate, grid: TimeGrid, enabled: bool = True,
                    bandwidth_rule: str = "times",
                    rel_floor: float = PD_REL_FLOOR) -> CovarianceEstimate:
    """Replace the diagonal by its kernel-smoothed version over the time grid.

    Off-diagonal entries are kept. If the result is no longer positive
    definite it is projected once more.
    """
    if not enabled:
        return sigma
    if sigma.P != grid.P:
        raise InvalidArgumentError("covariance size does not match the grid")
    diag = sigma.diagonal
    basis = grid.points if bandwidth_rule == "times" else diag
    h = silverman_bandwidth(basis)
    if not (h > 0 and math.isfinite(h)):
        raise InvalidArgumentError(f"degenerate smoothing bandwidth h={h}")
    m = np.array(sigma.matrix)
    np.fill_diagonal(m, nadaraya_watson(grid.points, diag, h))
    lam = np.linalg.eigvalsh(m)
    floor = rel_floor * max(1.0, float(lam[-1]))
    if lam[0] < floor:
        return nearest_pd(CovarianceEstimate(m, "raw", sigma.grid), rel_floor, stage="smoothed")
    return CovarianceEstimate(m, "smoothed", sigma.grid)


def sample_gaussian(center, sigma: CovarianceEstimate, M: int, seed) -> np.ndarray:
    """``M`` draws from MVN(center, sigma) through a symmetric eigen factor."""
    center = np.asarray(center, dtype=np.float64)
    if center.shape != (sigma.P,):
        raise InvalidArgumentError("center length does not match the covariance")
    lam, V = _eigh(np.asarray(sigma.matrix))
    if lam[0] < -1e-10 * max(1.0, abs(lam[-1])):
        raise NumericalError(f"covariance is not positive semidefinite (min eigenvalue {lam[0]:.3e})")
    factor = V * np.sqrt(np.clip(lam, 0.0, None))
    z = np.random.default_rng(seed).standard_normal((int(M), sigma.P))
    return center + z @ factor.T


def sup_statistics(samples, center, s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    keep = s > 0
    if not keep.any():
        raise InvalidArgumentError("all standard deviations are zero; band is undefined")
    dev = np.abs(np.asarray(samples)[:, keep] - np.asarray(center)[keep]) / s[keep]
    return dev.max(axis=1)


def _needed(alpha, M):
    # smallest count that is >= (1 - alpha) M, robust to float noise in the product
    return max(1, math.ceil((1.0 - alpha) * M - 1e-9))


def enclosed_count(stats, c: float) -> int:
    return int(np.count_nonzero(np.asarray(stats) <= c))


def critical_value(samples, center, s, alpha: float, method: str = "order",
                   c_bounds=(0.0, 10.0), c_step: float = 1e-3) -> float:
    """Smallest ``c`` such that at least ``(1 - alpha) M`` sampled curves lie in the band.

    ``method="order"`` takes the order statistic of the per-sample sup
    deviations directly; ``"grid"`` scans ``c`` from ``c_bounds[0]`` upwards
    in steps of ``c_step``.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidArgumentError(f"alpha must lie in (0, 1), got {alpha}")
    if np.any(np.asarray(s) < 0):
        raise InvalidArgumentError("standard deviations must be nonnegative")
    stats = sup_statistics(samples, center, s)
    need = _needed(alpha, stats.size)
    if method == "order":
        return float(np.sort(stats)[need - 1])
    if method == "grid":
        c1, c2 = c_bounds
        n_steps = int(math.floor((c2 - c1) / c_step + 1e-9))
        cs = c1 + c_step * np.arange(n_steps + 1)
        counts = np.searchsorted(np.sort(stats), cs, side="right")
        hit = np.flatnonzero(counts >= need)
        if hit.size == 0:
            raise NumericalError(f"no c in [{c1}, {c2}] encloses {need} of {stats.size} samples")
        return float(cs[hit[0]])
    raise InvalidArgumentError(f"unknown method {method!r}")


@dataclass(frozen=True, eq=False)
class ConfidenceBand:
    t: np.ndarray
    center: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    s: np.ndarray
    zeta: float
    alpha: float
    stage: str
    sample_enclosed: float  # fraction of the Gaussian draws inside the band
    covariance: CovarianceEstimate | None = None

    def contains(self, curve) -> bool:
        curve = np.asarray(curve)
        return bool(np.all((self.lower <= curve) & (curve <= self.upper)))

    def contains_pointwise(self, curve) -> np.ndarray:
        curve = np.asarray(curve)
        return (self.lower <= curve) & (curve <= self.upper)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower


def band_sd(cov: CovarianceEstimate, floor: float) -> np.ndarray:
    diag = np.clip(cov.diagonal, 0.0, None)
    s = np.sqrt(diag)
    s[diag <= ZERO_VARIANCE_FLOORS * floor] = 0.0
    return s


def band_from_covariance(center, cov: CovarianceEstimate, params: BandParams, seed,
                         grid: TimeGrid) -> ConfidenceBand:
    """Band for an already corrected (projected or smoothed) covariance."""
    center = np.asarray(center, dtype=np.float64)
    floor = pd_floor(cov.matrix, params.pd_floor)
    s = band_sd(cov, floor)
    if not (s > 0).any():
        raise InvalidArgumentError("estimated covariance is zero; band is undefined")
    samples = sample_gaussian(center, cov, params.M, seed)
    zeta = critical_value(samples, center, s, params.alpha, params.critical,
                          params.c_bounds, params.c_step)
    stats = sup_statistics(samples, center, s)
    return ConfidenceBand(
        t=grid.points.copy(), center=center.copy(), lower=center - zeta * s,
        upper=center + zeta * s, s=s, zeta=zeta, alpha=params.alpha, stage=cov.stage,
        sample_enclosed=enclosed_count(stats, zeta) / stats.size, covariance=cov)


def correct_covariance(sigma: CovarianceEstimate, params: BandParams,
                       grid: TimeGrid) -> CovarianceEstimate:
    cov = nearest_pd(sigma, params.pd_floor)
    if params.smoothing:
        cov = smooth_diagonal(cov, grid, True, params.bandwidth_rule, params.pd_floor)
    return cov


def build_band(center, sigma: CovarianceEstimate, params: BandParams, seed,
               grid: TimeGrid | None = None) -> ConfidenceBand:
    """Project, optionally smooth, simulate and return the simultaneous band."""
    center = np.asarray(center, dtype=np.float64)
    grid = grid if grid is not None else sigma.grid
    if grid is None:
        raise InvalidArgumentError("a time grid is required")
    if center.shape != (sigma.P,) or grid.P != sigma.P:
        raise InvalidArgumentError("center, covariance and grid sizes disagree")
    return band_from_covariance(center, correct_covariance(sigma, params, grid), params,
                                seed, grid)
