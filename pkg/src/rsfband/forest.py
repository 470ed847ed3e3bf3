"""Random survival forests built on pairwise matched disjoint subsamples.

For each pair ``b`` two disjoint size-``k`` subsamples are drawn (the second
from the complement of the first) and one tree is fit on each. The forest
prediction is the grand mean of all ``2B`` tree curves. Trees are stored in
packed flat arrays so prediction runs entirely inside numba.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba as nb
import numpy as np
from numba.typed import List

from . import _rng
from .data import Dataset, TimeGrid
from .errors import FitError, InvalidArgumentError
from .tree import SurvivalTree, TreeParams, _fit_kernel, _leaf_curve, _route


@dataclass(frozen=True)
class ForestParams:
    k: int
    B: int
    tree: TreeParams = TreeParams()
    seed: int = 0

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 2:
            raise InvalidArgumentError(f"subsample size k must be an integer >= 2, got {self.k}")
        if int(self.B) != self.B or self.B < 1:
            raise InvalidArgumentError(f"B must be a positive integer, got {self.B}")

    def check(self, n: int):
        if 2 * self.k > n:
            raise InvalidArgumentError(
                f"k={self.k} exceeds n/2={n / 2:g}; disjoint pairs need k <= n/2")


@nb.njit(cache=True, nogil=True)
def _draw_pair(n, k, master, b, perm):
    state = np.empty(1, np.uint64)
    state[0] = _rng.derive_key(master, b, 0, _rng.SAMPLING)
    for i in range(n):
        perm[i] = i
    for i in range(2 * k):
        j = i + _rng.randbelow(state, n - i)
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
    s1 = np.sort(perm[:k].copy())
    s2 = np.sort(perm[k:2 * k].copy())
    return s1, s2


@nb.njit(cache=True, nogil=True)
def _sample_pairs_kernel(n, k, b0, b1, master):
    out = np.empty((b1 - b0, 2, k), np.int64)
    perm = np.empty(n, np.int64)
    for b in range(b0, b1):
        s1, s2 = _draw_pair(n, k, master, b, perm)
        out[b - b0, 0] = s1
        out[b - b0, 1] = s2
    return out


def sample_matched_pairs(n: int, k: int, B: int, seed: int) -> np.ndarray:
    """``(B, 2, k)`` array of sorted 0-based row indices; ``[:, 0]`` and ``[:, 1]`` are disjoint."""
    if k < 1 or B < 1 or n < 1:
        raise InvalidArgumentError("n, k and B must be positive")
    if 2 * k > n:
        raise InvalidArgumentError(f"k={k} > n/2={n / 2:g}: cannot draw disjoint pairs")
    return _sample_pairs_kernel(int(n), int(k), 0, int(B), _rng.to_u64(seed))


@nb.njit(cache=True, nogil=True)
def _fit_range(X, y, ev, pairs, b0, mtry, min_node, master):
    out = List()
    for bb in range(pairs.shape[0]):
        for slot in range(2):
            seed = _rng.derive_key(master, b0 + bb, slot, _rng.SPLITTING)
            out.append(_fit_kernel(X, y, ev, pairs[bb, slot], mtry, min_node, seed))
    return out


@nb.njit(cache=True, nogil=True)
def _extend(dst, src):
    for item in src:
        dst.append(item)


@nb.njit(cache=True, nogil=True)
def _pack(trees):
    T = len(trees)
    node_off = np.zeros(T + 1, np.int64)
    leaf_off = np.zeros(T + 1, np.int64)
    for t in range(T):
        node_off[t + 1] = node_off[t] + trees[t][0].size
        leaf_off[t + 1] = leaf_off[t] + trees[t][7].size
    NN = node_off[T]
    NL = leaf_off[T]
    feature = np.empty(NN, np.int32)
    threshold = np.empty(NN)
    left = np.empty(NN, np.int32)
    right = np.empty(NN, np.int32)
    leaf_start = np.empty(NN, np.int32)
    leaf_len = np.empty(NN, np.int32)
    node_size = np.empty(NN, np.int32)
    leaf_times = np.empty(NL)
    leaf_chf = np.empty(NL)
    for t in range(T):
        a = node_off[t]
        z = node_off[t + 1]
        tr = trees[t]
        feature[a:z] = tr[0]
        threshold[a:z] = tr[1]
        left[a:z] = tr[2]
        right[a:z] = tr[3]
        leaf_start[a:z] = tr[4]
        leaf_len[a:z] = tr[5]
        node_size[a:z] = tr[6]
        leaf_times[leaf_off[t]:leaf_off[t + 1]] = tr[7]
        leaf_chf[leaf_off[t]:leaf_off[t + 1]] = tr[8]
    return (node_off, leaf_off, feature, threshold, left, right, leaf_start, leaf_len,
            node_size, leaf_times, leaf_chf)


@nb.njit(cache=True, nogil=True)
def _predict_curves(node_off, leaf_off, feature, threshold, left, right, leaf_start,
                    leaf_len, leaf_times, leaf_chf, x0s, grid):
    T = node_off.size - 1
    out = np.empty((x0s.shape[0], T, grid.size))
    for t in range(T):
        for m in range(x0s.shape[0]):
            node = _route(feature, threshold, left, right, x0s[m], node_off[t])
            _leaf_curve(leaf_times, leaf_chf, leaf_off[t] + leaf_start[node], leaf_len[node],
                        grid, out[m, t])
    return out


_PACKED_FIELDS = ("node_off", "leaf_off", "feature", "threshold", "left", "right",
                  "leaf_start", "leaf_len", "node_size", "leaf_times", "leaf_chf")


@dataclass(frozen=True, eq=False)
class MatchedPairForest:
    """``2B`` trees; tree ``2b + slot`` was fit on ``pairs[b, slot]``."""

    pairs: np.ndarray
    node_off: np.ndarray
    leaf_off: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_start: np.ndarray
    leaf_len: np.ndarray
    node_size: np.ndarray
    leaf_times: np.ndarray
    leaf_chf: np.ndarray
    p: int
    params: ForestParams

    @property
    def B(self) -> int:
        return self.pairs.shape[0]

    @property
    def n_trees(self) -> int:
        return 2 * self.B

    def tree(self, b: int, slot: int) -> SurvivalTree:
        t = 2 * b + slot
        a, z = self.node_off[t], self.node_off[t + 1]
        la, lz = self.leaf_off[t], self.leaf_off[t + 1]
        return SurvivalTree(self.feature[a:z], self.threshold[a:z], self.left[a:z],
                            self.right[a:z], self.leaf_start[a:z], self.leaf_len[a:z],
                            self.node_size[a:z], self.leaf_times[la:lz], self.leaf_chf[la:lz],
                            p=self.p)

    def check_disjoint(self):
        both = np.sort(self.pairs.reshape(self.B, -1), axis=1)
        clash = (np.diff(both, axis=1) == 0).any(axis=1)
        if clash.any():
            raise AssertionError(f"pair {int(np.argmax(clash))} subsamples overlap")

    def tree_curves(self, x0, grid: TimeGrid) -> np.ndarray:
        """``(2B, P)`` matrix of tree predictions at one target; rows ``2b, 2b+1`` form pair ``b``."""
        return self.tree_curves_many(np.atleast_2d(x0), grid)[0]

    def tree_curves_many(self, x0s, grid: TimeGrid) -> np.ndarray:
        x0s = np.ascontiguousarray(x0s, dtype=np.float64)
        if x0s.ndim != 2 or x0s.shape[1] != self.p:
            raise InvalidArgumentError(f"target points must have {self.p} coordinates")
        return _predict_curves(self.node_off, self.leaf_off, self.feature, self.threshold,
                               self.left, self.right, self.leaf_start, self.leaf_len,
                               self.leaf_times, self.leaf_chf, x0s, grid.points)

    def predict(self, x0, grid: TimeGrid) -> np.ndarray:
        return mean_curve(self.tree_curves(x0, grid))


def _chunks(B, n_jobs):
    n = max(1, min(int(n_jobs), B))
    edges = np.linspace(0, B, n + 1).astype(int)
    return [(edges[i], edges[i + 1]) for i in range(n) if edges[i + 1] > edges[i]]


def fit_forest(data: Dataset, params: ForestParams, grid: TimeGrid | None = None,
               n_jobs: int = 1) -> MatchedPairForest:
    """Fit ``B`` matched pairs of trees.

    Seeds are derived per ``(seed, b, slot)``, so the forest is identical for
    any ``n_jobs``. ``grid`` is accepted for interface symmetry; curves are
    evaluated lazily per target point.
    """
    params.check(data.n)
    params.tree.check(data.p)
    if data.n_events == 0:
        raise FitError("dataset has no observed failures")
    master = _rng.to_u64(params.seed)
    pairs = _sample_pairs_kernel(data.n, params.k, 0, params.B, master)
    has_event = data.event[pairs].any(axis=2)
    if not has_event.all():
        b, slot = np.argwhere(~has_event)[0]
        raise FitError(f"subsample {slot + 1} of pair b={b} contains no observed failures")

    def work(rng_):
        b0, b1 = rng_
        return _fit_range(data.X, data.time, data.event, pairs[b0:b1], b0,
                          params.tree.mtry, params.tree.min_node_size, master)

    chunks = _chunks(params.B, n_jobs)
    if len(chunks) == 1:
        parts = [work(chunks[0])]
    else:
        with ThreadPoolExecutor(len(chunks)) as ex:
            parts = list(ex.map(work, chunks))
    trees = parts[0]
    for part in parts[1:]:
        _extend(trees, part)
    packed = dict(zip(_PACKED_FIELDS, _pack(trees)))
    forest = MatchedPairForest(pairs=pairs, p=data.p, params=params, **packed)
    forest.check_disjoint()
    return forest


@nb.njit(cache=True, nogil=True)
def _pairwise_mean_rows(a):
    """Mean over rows using a fixed recursive halving order."""
    n = a.shape[0]
    if n <= 8:
        s = np.zeros(a.shape[1])
        for i in range(n):
            s += a[i]
        return s / n
    h = n // 2
    return (_pairwise_mean_rows(a[:h]) * h + _pairwise_mean_rows(a[h:]) * (n - h)) / n


def mean_curve(curves: np.ndarray) -> np.ndarray:
    curves = np.ascontiguousarray(curves, dtype=np.float64)
    if curves.ndim != 2 or curves.shape[0] == 0:
        raise InvalidArgumentError("expected a non-empty (trees, P) curve matrix")
    # centering on one row keeps identical curves exact and reduces cancellation
    ref = curves[0].copy()
    return ref + _pairwise_mean_rows(curves - ref)


def predict_ub(forest: MatchedPairForest, x0, grid: TimeGrid) -> np.ndarray:
    return forest.predict(x0, grid)
