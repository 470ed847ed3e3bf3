"""Survival trees grown with the log-rank best split and Nelson-Aalen leaves."""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from . import _rng
from .data import Dataset, TimeGrid
from .errors import FitError, InvalidArgumentError


@dataclass(frozen=True)
class TreeParams:
    mtry: int = 3
    min_node_size: int = 15

    def __post_init__(self):
        if int(self.mtry) != self.mtry or self.mtry < 1:
            raise InvalidArgumentError(f"mtry must be a positive integer, got {self.mtry}")
        if int(self.min_node_size) != self.min_node_size or self.min_node_size < 1:
            raise InvalidArgumentError(f"min_node_size must be >= 1, got {self.min_node_size}")

    def check(self, p: int):
        if self.mtry > p:
            raise InvalidArgumentError(f"mtry={self.mtry} exceeds the number of covariates p={p}")


@nb.njit(cache=True, nogil=True)
def _node_event_table(ys, es):
    """Distinct event times of a node with at-risk and death counts.

    Returns ``(times, at_risk, deaths, rank, event_pos)`` where ``rank[i]`` is
    the number of distinct event times <= ys[i] (member i is at risk at the
    first ``rank[i]`` times) and ``event_pos[i]`` the index of its own event
    time, or -1 when censored.
    """
    nn = ys.size
    n_ev = 0
    for i in range(nn):
        if es[i]:
            n_ev += 1
    et = np.empty(n_ev)
    c = 0
    for i in range(nn):
        if es[i]:
            et[c] = ys[i]
            c += 1
    et.sort()
    times = np.empty(n_ev)
    D = 0
    for i in range(n_ev):
        if D == 0 or et[i] != times[D - 1]:
            times[D] = et[i]
            D += 1
    times = times[:D]
    rank = np.searchsorted(times, ys, side="right")
    event_pos = np.full(nn, -1, np.int64)
    deaths = np.zeros(D)
    hist = np.zeros(D + 1)
    for i in range(nn):
        hist[rank[i]] += 1.0
        if es[i]:
            event_pos[i] = rank[i] - 1
            deaths[rank[i] - 1] += 1.0
    at_risk = np.zeros(D)
    acc = 0.0
    for j in range(D, 0, -1):
        acc += hist[j]
        at_risk[j - 1] = acc
    return times, at_risk, deaths, rank, event_pos


@nb.njit(cache=True, nogil=True)
def _fenwick_add(tree, pos, val):
    i = pos + 1
    while i < tree.size:
        tree[i] += val
        i += i & (-i)


@nb.njit(cache=True, nogil=True)
def _fenwick_sum(tree, pos):
    """Sum of entries at positions < pos."""
    s = 0.0
    i = pos
    while i > 0:
        s += tree[i]
        i -= i & (-i)
    return s


@nb.njit(cache=True, nogil=True)
def _fit_kernel(X, y, ev, members_in, mtry, min_node, seed):
    m = members_in.size
    p = X.shape[1]
    members = members_in.copy()
    scratch = np.empty(m, np.int64)
    max_nodes = 2 * m + 1
    feature = np.full(max_nodes, -1, np.int32)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, np.int32)
    right = np.full(max_nodes, -1, np.int32)
    leaf_start = np.zeros(max_nodes, np.int32)
    leaf_len = np.zeros(max_nodes, np.int32)
    node_size = np.zeros(max_nodes, np.int32)
    leaf_times = np.empty(m)
    leaf_chf = np.empty(m)
    n_entries = 0

    st_start = np.empty(max_nodes, np.int64)
    st_end = np.empty(max_nodes, np.int64)
    st_node = np.empty(max_nodes, np.int64)
    st_start[0] = 0
    st_end[0] = m
    st_node[0] = 0
    top = 1
    n_nodes = 1

    state = np.empty(1, np.uint64)
    state[0] = seed
    var_pool = np.arange(p)

    while top > 0:
        top -= 1
        start = st_start[top]
        end = st_end[top]
        node = st_node[top]
        nn = end - start
        node_size[node] = nn
        seg = members[start:end]
        ys = y[seg]
        es = ev[seg]
        times, R, d, rank, epos = _node_event_table(ys, es)
        D = times.size
        tot_ev = 0
        for i in range(nn):
            if es[i]:
                tot_ev += 1

        found = False
        best = -1.0
        bvar = -1
        bthr = 0.0
        if nn >= 2 * min_node and D >= 2:
            for i in range(mtry):
                j = i + _rng.randbelow(state, p - i)
                tmp = var_pool[i]
                var_pool[i] = var_pool[j]
                var_pool[j] = tmp
            cand = np.sort(var_pool[:mtry].copy())
            # Prefix sums over event-time index j of
            #   e_j = d_j / R_j                      (expected deaths per at-risk)
            #   w_j = d_j (R_j - d_j) / (R_j - 1)    (hypergeometric weight)
            # so that moving one member of rank r into the left child changes
            # the log-rank numerator by delta - E[r], the linear variance term by
            # W1[r] and the quadratic term by sum_{j<r} u_j (2 RL_j + 1).
            E = np.zeros(D + 1)
            W1 = np.zeros(D + 1)
            U = np.zeros(D + 1)
            for j in range(D):
                w = d[j] * (R[j] - d[j]) / (R[j] - 1.0) if R[j] > 1.0 else 0.0
                E[j + 1] = E[j] + d[j] / R[j]
                W1[j + 1] = W1[j] + w / R[j]
                U[j + 1] = U[j] + w / (R[j] * R[j])
            cnt = np.zeros(D + 2)
            usum = np.zeros(D + 2)
            for ci in range(mtry):
                v = cand[ci]
                xs = np.empty(nn)
                for i in range(nn):
                    xs[i] = X[seg[i], v]
                order = np.argsort(xs)
                cnt[:] = 0.0
                usum[:] = 0.0
                n_left_total = 0.0
                num = 0.0
                lin = 0.0
                quad = 0.0
                nl = 0
                el = 0
                for q in range(nn - 1):
                    i = order[q]
                    r = rank[i]
                    # sum_{j<r} u_j RL_j over current left members l:
                    # U[min(r, r_l)] summed, split by r_l < r or >= r
                    below = _fenwick_sum(cnt, r)
                    s_u = _fenwick_sum(usum, r) + U[r] * (n_left_total - below)
                    quad += 2.0 * s_u + U[r]
                    lin += W1[r]
                    num -= E[r]
                    if epos[i] >= 0:
                        num += 1.0
                        el += 1
                    _fenwick_add(cnt, r, 1.0)
                    _fenwick_add(usum, r, U[r])
                    n_left_total += 1.0
                    nl += 1
                    if nn - nl < min_node:
                        break
                    xa = xs[i]
                    xb = xs[order[q + 1]]
                    if xb == xa or nl < min_node:
                        continue
                    if el < 1 or tot_ev - el < 1:
                        continue
                    var = lin - quad
                    if var <= 1e-10 * lin:
                        continue
                    stat = num * num / var
                    if stat > best:
                        best = stat
                        bvar = v
                        thr = 0.5 * (xa + xb)
                        if not (xa <= thr < xb):
                            thr = xa
                        bthr = thr
                        found = True

        if found:
            nl = 0
            for i in range(nn):
                if X[seg[i], bvar] <= bthr:
                    scratch[nl] = seg[i]
                    nl += 1
            nr = nl
            for i in range(nn):
                if X[seg[i], bvar] > bthr:
                    scratch[nr] = seg[i]
                    nr += 1
            for i in range(nn):
                members[start + i] = scratch[i]
            lc = n_nodes
            rc = n_nodes + 1
            n_nodes += 2
            feature[node] = bvar
            threshold[node] = bthr
            left[node] = lc
            right[node] = rc
            st_start[top] = start + nl
            st_end[top] = end
            st_node[top] = rc
            top += 1
            st_start[top] = start
            st_end[top] = start + nl
            st_node[top] = lc
            top += 1
        else:
            leaf_start[node] = n_entries
            leaf_len[node] = D
            acc = 0.0
            for j in range(D):
                acc += d[j] / R[j]
                leaf_times[n_entries] = times[j]
                leaf_chf[n_entries] = acc
                n_entries += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), leaf_start[:n_nodes].copy(), leaf_len[:n_nodes].copy(),
            node_size[:n_nodes].copy(), leaf_times[:n_entries].copy(), leaf_chf[:n_entries].copy())


@nb.njit(cache=True, nogil=True)
def _route(feature, threshold, left, right, x0, node0):
    node = node0
    while left[node] >= 0:
        if x0[feature[node]] <= threshold[node]:
            node = node0 + left[node]
        else:
            node = node0 + right[node]
    return node


@nb.njit(cache=True, nogil=True)
def _leaf_curve(leaf_times, leaf_chf, s, L, grid, out):
    j = 0
    cur = 0.0
    for g in range(grid.size):
        while j < L and leaf_times[s + j] <= grid[g]:
            cur = leaf_chf[s + j]
            j += 1
        out[g] = cur


@nb.njit(cache=True, nogil=True)
def _predict_one(feature, threshold, left, right, leaf_start, leaf_len,
                 leaf_times, leaf_chf, x0, grid, out):
    node = _route(feature, threshold, left, right, x0, 0)
    _leaf_curve(leaf_times, leaf_chf, leaf_start[node], leaf_len[node], grid, out)


@dataclass(frozen=True, eq=False)
class SurvivalTree:
    """Flat-array binary tree. Internal nodes have ``left >= 0``.

    Child indices are local to the tree. Leaf ``i`` owns the slice
    ``leaf_start[i] : leaf_start[i] + leaf_len[i]`` of ``leaf_times`` and
    ``leaf_chf`` (distinct event times and the Nelson-Aalen cumulative hazard
    just after each).
    """

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

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def is_leaf(self) -> np.ndarray:
        return self.left < 0

    @property
    def n_leaves(self) -> int:
        return int(self.is_leaf.sum())

    def leaf_for(self, x0) -> int:
        x0 = _check_point(x0, self.p)
        return int(_route(self.feature, self.threshold, self.left, self.right, x0, 0))

    def predict_chf(self, x0, grid: TimeGrid) -> np.ndarray:
        x0 = _check_point(x0, self.p)
        out = np.empty(grid.P)
        _predict_one(self.feature, self.threshold, self.left, self.right, self.leaf_start,
                     self.leaf_len, self.leaf_times, self.leaf_chf, x0, grid.points, out)
        return out

    def same_as(self, other: "SurvivalTree") -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("feature", "threshold", "left", "right", "leaf_start",
                             "leaf_len", "node_size", "leaf_times", "leaf_chf"))


def _check_point(x0, p):
    x0 = np.ascontiguousarray(x0, dtype=np.float64).reshape(-1)
    if x0.size != p:
        raise InvalidArgumentError(f"target point has {x0.size} coordinates, expected {p}")
    return x0


def fit_indices(data: Dataset, idx, params: TreeParams, seed) -> SurvivalTree:
    """Fit a tree on ``data`` restricted to rows ``idx`` (order matters for determinism)."""
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise FitError("cannot fit a tree on an empty subsample")
    if not data.event[idx].any():
        raise FitError("subsample contains no observed failures")
    params.check(data.p)
    arrays = _fit_kernel(data.X, data.time, data.event, idx, params.mtry,
                         params.min_node_size, _rng.to_u64(seed))
    return SurvivalTree(*arrays, p=data.p)


def fit_tree(subsample: Dataset, params: TreeParams, seed: int) -> SurvivalTree:
    return fit_indices(subsample, np.arange(subsample.n), params, seed)


def predict_chf(tree: SurvivalTree, x0, grid: TimeGrid) -> np.ndarray:
    return tree.predict_chf(x0, grid)
