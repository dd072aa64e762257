"""Maximum-entropy null model for trader-day bipartite activity.

The state matrix splits into three disjoint bipartite layers (b, s, bs).  For
each layer a bipartite configuration model -- the maximum-entropy ensemble
constrained on trader and day degrees -- is fitted by maximum likelihood.
Pair similarity (the V-motif count) is then validated against the implied
Poisson-Binomial distribution, giving an alternative to the hypergeometric
validation with heterogeneous day activity built in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from scipy import sparse

from .community import Partition
from .errors import FitError
from .svn import (LINK_TYPES, STATE_B, STATE_BS, STATE_S, StateMatrix,
                  ValidatedNetwork, fdr_threshold)

LAYERS = ("b", "s", "bs")
_LAYER_STATE = {"b": STATE_B, "s": STATE_S, "bs": STATE_BS}
_LAYER_LINK = {"b": "bb", "s": "ss", "bs": "bsbs"}


@dataclass
class Biadjacency:
    """Binary trader-day incidence for one state layer."""

    layer: str
    stock: str
    investors: tuple[str, ...]
    theta: float
    matrix: np.ndarray          # (N, T) uint8

    @property
    def n_days(self) -> int:
        return int(self.matrix.shape[1])

    @property
    def row_degrees(self) -> np.ndarray:
        return self.matrix.sum(axis=1)

    @property
    def col_degrees(self) -> np.ndarray:
        return self.matrix.sum(axis=0)


def split_tripartite(states: StateMatrix) -> dict[str, Biadjacency]:
    """One binary layer per state; together they partition the active cells."""
    return {layer: Biadjacency(layer, states.stock, states.investors,
                               states.theta,
                               (states.codes == _LAYER_STATE[layer])
                               .astype(np.uint8))
            for layer in LAYERS}


@dataclass
class BicmModel:
    """Fitted configuration model: multipliers and link probabilities."""

    layer: str
    x: np.ndarray               # (N,) trader multipliers, 0 / inf on reduced
    y: np.ndarray               # (T,) day multipliers
    p: np.ndarray               # (N, T) link probabilities
    residual: float             # max |expected - observed| degree
    n_iter: int
    ll_path: tuple[float, ...]  # core log-likelihood per outer iteration


def _log_likelihood(x: np.ndarray, y: np.ndarray, k: np.ndarray,
                    h: np.ndarray) -> float:
    # Correctly-rounded summation: the path is a convergence diagnostic, and
    # plain summation noise on a ~1e3-magnitude total would dwarf the tiny
    # true increments near the fixed point.
    outer = x[:, None] * y[None, :]
    return math.fsum(np.concatenate([k * np.log(x), h * np.log(y),
                                     -np.log1p(outer).ravel()]))


def _newton_block(target: np.ndarray, own: np.ndarray, other: np.ndarray
                  ) -> np.ndarray:
    """Solve sum_t own_i*other_t/(1+own_i*other_t) = target_i exactly per row.

    Independent one-dimensional problems; Newton steps on log(own), which is
    globally convergent here because the expected degree is increasing and
    concave in log(own).
    """
    u = np.log(own)
    for _ in range(80):
        exp_u = np.exp(u)
        p = exp_u[:, None] * other[None, :]
        p /= 1.0 + p
        f = p.sum(axis=1) - target
        slope = (p * (1.0 - p)).sum(axis=1)
        step = f / np.maximum(slope, 1e-300)
        u -= np.clip(step, -30.0, 30.0)
        if np.max(np.abs(f)) < 1e-12:
            break
    return np.exp(u)


def bicm_fit(bi: Biadjacency, tol: float = 1e-8,
             max_iter: int = 500) -> BicmModel:
    """Maximum-likelihood fit of the configuration model to one layer.

    Zero-degree rows/columns get p = 0 and full rows/columns get p = 1 before
    the solve (their multipliers diverge); the remaining core is fitted by
    alternating exact block maximizations, so the log-likelihood is
    non-decreasing across iterations by construction (the recorded path is
    exact up to roundoff of the evaluation).
    """
    mat = bi.matrix
    n, t = mat.shape
    k_all = mat.sum(axis=1).astype(float)
    h_all = mat.sum(axis=0).astype(float)
    p_full = np.zeros((n, t))
    active_r = np.ones(n, dtype=bool)
    active_c = np.ones(t, dtype=bool)
    k_cur, h_cur = k_all.copy(), h_all.copy()

    while True:
        active_r &= k_cur > 0
        active_c &= h_cur > 0
        n_ar, n_ac = int(active_r.sum()), int(active_c.sum())
        full_r = active_r & (k_cur == n_ac) & (n_ac > 0)
        if full_r.any():
            p_full[np.ix_(full_r, active_c)] = 1.0
            h_cur[active_c] -= int(full_r.sum())
            active_r &= ~full_r
            continue
        full_c = active_c & (h_cur == n_ar) & (n_ar > 0)
        if full_c.any():
            p_full[np.ix_(active_r, full_c)] = 1.0
            k_cur[active_r] -= int(full_c.sum())
            active_c &= ~full_c
            continue
        break

    rows = np.flatnonzero(active_r)
    cols = np.flatnonzero(active_c)
    x = np.zeros(n)
    y = np.zeros(t)
    ll_path: list[float] = []
    n_iter = 0
    residual = 0.0
    if rows.size and cols.size:
        k = k_cur[rows]
        h = h_cur[cols]
        scale = np.sqrt(k.sum())
        xc = k / scale
        yc = h / scale
        for n_iter in range(1, max_iter + 1):
            xc = _newton_block(k, xc, yc)
            yc = _newton_block(h, yc, xc)
            ll_path.append(_log_likelihood(xc, yc, k, h))
            p_core = xc[:, None] * yc[None, :]
            p_core /= 1.0 + p_core
            residual = max(
                float(np.abs(p_core.sum(axis=1) - k).max()),
                float(np.abs(p_core.sum(axis=0) - h).max()))
            if residual <= tol:
                break
        else:
            raise FitError(
                f"layer {bi.layer!r} degree fit stuck at residual "
                f"{residual:.3e} after {max_iter} iterations (tol {tol:.1e})")
        x[rows] = xc
        y[cols] = yc
        p_full[np.ix_(rows, cols)] = p_core
    return BicmModel(bi.layer, x, y, p_full, residual, n_iter,
                     tuple(ll_path))


def poisson_binomial_tail(probs, n: int) -> float:
    """P(S >= n) for S a sum of independent Bernoulli(probs) variables.

    Exact O(T^2) dynamic program over counts; result clamped to [0, 1].
    """
    q = np.asarray(probs, dtype=float)
    if q.size and (q.min() < 0.0 or q.max() > 1.0):
        raise ValueError("success probabilities must lie in [0, 1]")
    if not 0 <= n <= q.size:
        raise ValueError(f"count {n} outside [0, {q.size}]")
    if n == 0:
        return 1.0
    pmf = np.zeros(q.size + 1)
    pmf[0] = 1.0
    for m, p in enumerate(q):
        pmf[1:m + 2] = pmf[1:m + 2] * (1.0 - p) + pmf[:m + 1] * p
        pmf[0] *= 1.0 - p
    return float(min(max(pmf[n:].sum(), 0.0), 1.0))


def _tails_batched(p_i: np.ndarray, p_j: np.ndarray,
                   counts: np.ndarray) -> np.ndarray:
    """P(S >= count) per pair with a count-truncated DP, chunked over pairs.

    Tracks only the pmf below each pair's count and returns the complement,
    so the cost is O(T * max_count) per chunk instead of O(T^2).
    """
    m = counts.size
    out = np.empty(m)
    chunk = 4096
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        q = p_i[lo:hi] * p_j[lo:hi]
        n_max = int(counts[lo:hi].max())
        pmf = np.zeros((hi - lo, n_max))
        pmf[:, 0] = 1.0
        for t in range(q.shape[1]):
            qt = q[:, t:t + 1]
            pmf[:, 1:] = pmf[:, 1:] * (1.0 - qt) + pmf[:, :-1] * qt
            pmf[:, 0:1] *= 1.0 - qt
        mask = np.arange(n_max)[None, :] < counts[lo:hi, None]
        out[lo:hi] = 1.0 - (pmf * mask).sum(axis=1)
    return np.clip(out, 0.0, 1.0)


def vmotif_validate(layers: Mapping[str, Biadjacency],
                    models: Mapping[str, BicmModel],
                    correction: str = "fdr", alpha: float = 0.01,
                    n_test_convention: str = "bicm") -> ValidatedNetwork:
    """Validate pairwise co-activity counts against the fitted null.

    For each layer, the shared-day count of a trader pair is compared with
    the Poisson-Binomial tail implied by the layer's link probabilities; the
    surviving pairs form a diagonal-type network (b -> bb and so on).  The
    test count is 3N(3N-1)/2 (the three-layer convention) unless
    `n_test_convention` is set to "pairwise" for 9N(N-1)/2.
    """
    first = layers[LAYERS[0]]
    investors = first.investors
    n = len(investors)
    if n_test_convention == "bicm":
        n_tests = 3 * n * (3 * n - 1) // 2
    elif n_test_convention == "pairwise":
        n_tests = 9 * n * (n - 1) // 2
    else:
        raise ValueError(f"unknown test-count convention {n_test_convention!r}")

    i_all, j_all, ty_all, w_all, p_all = [], [], [], [], []
    for layer in LAYERS:
        bi = layers[layer]
        model = models[layer]
        counts = sparse.triu(
            sparse.csr_matrix(bi.matrix.astype(np.int64)) @
            sparse.csr_matrix(bi.matrix.astype(np.int64)).T, k=1).tocoo()
        if counts.nnz == 0:
            continue
        order = np.lexsort((counts.col, counts.row))
        rows = counts.row[order].astype(np.int64)
        cols = counts.col[order].astype(np.int64)
        motifs = counts.data[order].astype(np.int64)
        pvals = _tails_batched(model.p[rows], model.p[cols], motifs)
        i_all.append(rows)
        j_all.append(cols)
        ty_all.append(np.full(rows.size, LINK_TYPES.index(_LAYER_LINK[layer]),
                              dtype=np.int8))
        w_all.append(motifs)
        p_all.append(pvals)

    if i_all:
        i = np.concatenate(i_all)
        j = np.concatenate(j_all)
        types = np.concatenate(ty_all)
        weights = np.concatenate(w_all)
        pvalues = np.concatenate(p_all)
        order = np.lexsort((types, j, i))
        i, j, types = i[order], j[order], types[order]
        weights, pvalues = weights[order], pvalues[order]
    else:
        i = j = np.empty(0, dtype=np.int64)
        types = np.empty(0, dtype=np.int8)
        weights = np.empty(0, dtype=np.int64)
        pvalues = np.empty(0, dtype=float)

    if correction == "bonferroni":
        cut = alpha / n_tests
    elif correction == "fdr":
        cut = fdr_threshold(pvalues, alpha, n_tests)
    else:
        raise ValueError(f"unknown correction {correction!r}")
    keep = (pvalues <= cut) if cut is not None else np.zeros(pvalues.shape,
                                                             dtype=bool)
    return ValidatedNetwork(first.stock, investors, first.n_days, first.theta,
                            correction, alpha, cut, n_tests, i[keep], j[keep],
                            types[keep], weights[keep], pvalues[keep],
                            null_model="bicm")


@dataclass
class PartitionComparison:
    """Pairwise cluster Jaccard matrix plus a greedy one-to-one matching."""

    row_clusters: tuple[int, ...]
    col_clusters: tuple[int, ...]
    jaccard: np.ndarray
    matches: tuple[tuple[int, int, float], ...]
    floor: float

    @property
    def n_above_floor(self) -> int:
        return sum(1 for *_pair, score in self.matches if score >= self.floor)


def compare_partitions(rows: Partition, cols: Partition,
                       floor: float = 0.8) -> PartitionComparison:
    """Jaccard similarity between every cluster pair across two partitions.

    Greedily matches clusters one-to-one by descending similarity and reports
    how many matched pairs clear the floor.
    """
    row_ids = tuple(range(1, rows.n_clusters + 1))
    col_ids = tuple(range(1, cols.n_clusters + 1))
    row_sets = {c: set(rows.members(c)) for c in row_ids}
    col_sets = {c: set(cols.members(c)) for c in col_ids}
    jac = np.zeros((len(row_ids), len(col_ids)))
    for a, ra in enumerate(row_ids):
        for b, cb in enumerate(col_ids):
            union = len(row_sets[ra] | col_sets[cb])
            if union:
                jac[a, b] = len(row_sets[ra] & col_sets[cb]) / union
    candidates = sorted(
        ((a, b) for a in range(len(row_ids)) for b in range(len(col_ids))
         if jac[a, b] > 0),
        key=lambda ab: (-jac[ab[0], ab[1]], ab[0], ab[1]))
    used_r: set[int] = set()
    used_c: set[int] = set()
    matches = []
    for a, b in candidates:
        if a in used_r or b in used_c:
            continue
        used_r.add(a)
        used_c.add(b)
        matches.append((row_ids[a], col_ids[b], float(jac[a, b])))
    return PartitionComparison(row_ids, col_ids, jac, tuple(matches), floor)
