"""Unbiased covariance estimation for forest cumulative-hazard predictions.

The covariance of the forest prediction at two times splits into a tree term
(estimated from the disjoint pairs) minus a sample term (spread of all trees
around the forest mean). Both are estimated here from a ``(2B, P)`` matrix of
tree curves whose rows ``2b`` and ``2b + 1`` were fit on the two disjoint
subsamples of pair ``b``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from .data import TimeGrid
from .errors import InvalidArgumentError

STAGES = ("raw", "projected", "smoothed")
ORACLE_MAX_SUBSETS = 100_000


@dataclass(frozen=True, eq=False)
class CovarianceEstimate:
    """``P x P`` covariance matrix tagged with how far it has been corrected."""

    matrix: np.ndarray
    stage: str = "raw"
    grid: TimeGrid | None = None

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidArgumentError("covariance matrix must be square")
        if self.stage not in STAGES:
            raise InvalidArgumentError(f"unknown stage {self.stage!r}")
        if self.grid is not None and self.grid.P != m.shape[0]:
            raise InvalidArgumentError("matrix size does not match the grid")
        m = 0.5 * (m + m.T)
        if self.stage != "raw":
            lam = np.linalg.eigvalsh(m)
            if lam[0] < -1e-10 * max(1.0, abs(lam[-1])):
                raise InvalidArgumentError(
                    f"{self.stage} covariance has negative eigenvalue {lam[0]:.3e}")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.matrix).copy()

    @property
    def P(self) -> int:
        return self.matrix.shape[0]


def _check_curves(curves) -> np.ndarray:
    curves = np.asarray(curves, dtype=np.float64)
    if curves.ndim != 2 or curves.shape[0] < 2 or curves.shape[0] % 2:
        raise InvalidArgumentError("tree curves must be a (2B, P) matrix with B >= 1")
    return curves


def estimate_ch_b(curves) -> np.ndarray:
    """Tree covariance term from within-pair differences."""
    curves = _check_curves(curves)
    B = curves.shape[0] // 2
    diff = curves[0::2] - curves[1::2]
    ch = diff.T @ diff / (2.0 * B)
    return 0.5 * (ch + ch.T)


def estimate_cs_b(curves, ub) -> np.ndarray:
    """Sample covariance term: second moment of all tree curves around ``ub``."""
    curves = _check_curves(curves)
    ub = np.asarray(ub, dtype=np.float64)
    if ub.shape != (curves.shape[1],):
        raise InvalidArgumentError("forest curve length does not match the tree curves")
    centered = curves - ub
    cs = centered.T @ centered / curves.shape[0]
    return 0.5 * (cs + cs.T)


def estimate_sigma(curves, ub, grid: TimeGrid | None = None) -> CovarianceEstimate:
    """Raw covariance estimate of the forest prediction; may be indefinite."""
    return CovarianceEstimate(estimate_ch_b(curves) - estimate_cs_b(curves, ub), "raw", grid)


def hypergeom_weight(d: int, k: int, n: int) -> float:
    """Probability that two random size-``k`` subsets of ``n`` items share ``d`` items.

    Evaluated with exact integer binomials, then rounded once to float.
    """
    if not (0 <= d <= k <= n):
        raise InvalidArgumentError(f"need 0 <= d <= k <= n, got d={d}, k={k}, n={n}")
    if k - d > n - k:
        return 0.0
    return float(Fraction(math.comb(k, d) * math.comb(n - k, k - d), math.comb(n, k)))


def hypergeom_weights(k: int, n: int) -> np.ndarray:
    return np.array([hypergeom_weight(d, k, n) for d in range(k + 1)])


Kernel = Callable[[np.ndarray, TimeGrid], np.ndarray]


@dataclass(frozen=True, eq=False)
class CompleteCovariance:
    """Complete U-statistic quantities over every size-``k`` subsample."""

    subsets: np.ndarray      # (N, k) sorted index tuples in lexicographic order
    curves: np.ndarray       # (N, P) kernel values
    u: np.ndarray            # complete U-statistic
    c_h: np.ndarray
    c_s: np.ndarray

    @property
    def cov(self) -> np.ndarray:
        return self.c_h - self.c_s


def _n_subsets_guard(n, k):
    N = math.comb(n, k)
    if N > ORACLE_MAX_SUBSETS:
        raise InvalidArgumentError(
            f"complete enumeration needs C({n},{k}) = {N} kernel evaluations "
            f"(limit {ORACLE_MAX_SUBSETS})")
    return N


def complete_from_curves(subsets: np.ndarray, curves: np.ndarray, n: int,
                         chunk: int = 512) -> CompleteCovariance:
    """Complete tree and sample covariance terms from precomputed kernel curves."""
    subsets = np.asarray(subsets)
    curves = np.asarray(curves, dtype=np.float64)
    N, k = subsets.shape
    if 2 * k > n:
        raise InvalidArgumentError(f"k={k} > n/2: no disjoint subsample pairs exist")
    u = curves.mean(axis=0)
    centered = curves - u
    c_s = centered.T @ centered / N

    member = np.zeros((N, n))
    member[np.arange(N)[:, None], subsets] = 1.0
    n_disjoint = math.comb(n - k, k)
    # g_i = sum of curves over subsets disjoint from subset i
    g = np.empty_like(curves)
    for a in range(0, N, chunk):
        disjoint = (member[a:a + chunk] @ member.T) == 0.0
        g[a:a + chunk] = disjoint.astype(np.float64) @ curves
    # sum over ordered disjoint pairs of (h_i - h_j)(h_i - h_j)^T
    cross = curves.T @ g
    total = 2.0 * n_disjoint * (curves.T @ curves) - cross - cross.T
    c_h = total / (2.0 * N * n_disjoint)
    return CompleteCovariance(subsets, curves, u, 0.5 * (c_h + c_h.T), 0.5 * (c_s + c_s.T))


def complete_cov_components(n: int, k: int, kernel: Kernel, grid: TimeGrid) -> CompleteCovariance:
    if k < 1 or 2 * k > n:
        raise InvalidArgumentError(f"k={k} > n/2={n / 2:g}: no disjoint subsample pairs exist")
    _n_subsets_guard(n, k)
    subsets = np.array(list(itertools.combinations(range(n), k)), dtype=np.int64)
    curves = np.array([np.asarray(kernel(s, grid), dtype=np.float64) for s in subsets])
    if curves.shape != (subsets.shape[0], grid.P):
        raise InvalidArgumentError("kernel must return one value per grid point")
    return complete_from_curves(subsets, curves, n)


def complete_cov_oracle(data, k: int, kernel: Kernel, grid: TimeGrid) -> np.ndarray:
    """Covariance of the complete U-statistic by exhaustive enumeration.

    ``kernel(indices, grid)`` maps sorted 0-based row indices of ``data`` to a
    curve on ``grid``; it must be deterministic.
    """
    n = data.n if hasattr(data, "n") else int(data)
    return complete_cov_components(n, k, kernel, grid).cov
