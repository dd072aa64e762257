"""Statistically validated networks of co-occurring trading states.

Each investor gets a daily state on one stock -- buying (b), selling (s) or
mixed (bs) -- from the sign of the day's volume directionality against a dead
band of width theta.  Projecting states onto investor pairs yields a weighted
multigraph with nine link types; each link is tested against a hypergeometric
null that fixes both investors' state-day counts, and the network keeps the
links whose p-values survive a multiple-comparison correction.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from datetime import date
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterator

import numpy as np
from scipy import sparse
from scipy.special import gammaln

from .market_data import TransactionPanel
from .util import dump_json, fmt

STATE_INACTIVE = 0
STATE_B = 1
STATE_S = 2
STATE_BS = 3

_STATE_NAMES = {STATE_B: "b", STATE_S: "s", STATE_BS: "bs"}
_MARGIN_COL = {STATE_B: 0, STATE_S: 1, STATE_BS: 2}

# Ordered (state of i, state of j) pairs; concatenating the state names gives
# the canonical link-type labels.
_TYPE_PAIRS = (
    (STATE_B, STATE_B), (STATE_S, STATE_S), (STATE_BS, STATE_BS),
    (STATE_B, STATE_S), (STATE_S, STATE_B),
    (STATE_B, STATE_BS), (STATE_BS, STATE_B),
    (STATE_S, STATE_BS), (STATE_BS, STATE_S),
)
LINK_TYPES = tuple(_STATE_NAMES[qi] + _STATE_NAMES[qj] for qi, qj in _TYPE_PAIRS)
DIAGONAL_TYPES = ("bb", "ss", "bsbs")

# Starting tail terms are exact rationals up to this many days; beyond it a
# log-gamma start (relative error ~1e-13) is plenty for thresholding.
_EXACT_START_MAX_T = 200
_PVALUE_CHUNK = 16384


def directionality(v_buy: float, v_sell: float) -> float:
    """Signed buy/sell imbalance in [-1, 1]; undefined on inactive days."""
    total = v_buy + v_sell
    if total == 0:
        raise ValueError("directionality is undefined when no volume traded")
    return (v_buy - v_sell) / total


@dataclass
class StateMatrix:
    """Daily trading states of every investor active on one stock."""

    stock: str
    investors: tuple[str, ...]
    days: tuple[date, ...]
    codes: np.ndarray           # (N, T) int8 of STATE_* codes
    theta: float

    @property
    def n(self) -> int:
        return len(self.investors)

    @property
    def n_days(self) -> int:
        return len(self.days)

    @property
    def margins(self) -> np.ndarray:
        """(N, 3) counts of b, s and bs days per investor."""
        return np.stack([(self.codes == q).sum(axis=1)
                         for q in (STATE_B, STATE_S, STATE_BS)], axis=1)


def assign_states(panel: TransactionPanel, stock: str,
                  theta: float = 0.01) -> StateMatrix:
    """Classify each investor-day on `stock` by volume directionality.

    Days with directionality above theta are buying, below -theta selling,
    inside the band mixed; days without share volume carry no state.
    """
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie strictly between 0 and 1, got {theta}")
    investors = panel.stock_universe(stock)
    mats = panel.stock_matrices(stock, investors)
    v_buy = mats["buy_volume"]
    v_sell = mats["sell_volume"]
    total = v_buy + v_sell
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(total > 0, (v_buy - v_sell) / np.where(total > 0, total, 1.0), 0.0)
    codes = np.zeros(total.shape, dtype=np.int8)
    active = total > 0
    codes[active & (r > theta)] = STATE_B
    codes[active & (r < -theta)] = STATE_S
    codes[active & (np.abs(r) <= theta)] = STATE_BS
    return StateMatrix(stock, investors, panel.calendar, codes, theta)


@dataclass
class CoOccurrenceGraph:
    """Weighted state co-occurrence multigraph over investor pairs (i < j)."""

    stock: str
    investors: tuple[str, ...]
    n_days: int
    theta: float
    margins: np.ndarray         # (N, 3) state-day counts
    i: np.ndarray               # edge arrays, canonical (i, j, type) order
    j: np.ndarray
    types: np.ndarray           # int8 index into LINK_TYPES
    weights: np.ndarray         # shared state-day counts, all >= 1


def project_traders(states: StateMatrix) -> CoOccurrenceGraph:
    """Count, for every pair and every state combination, the shared days."""
    codes = states.codes
    masks = {q: sparse.csr_matrix((codes == q).astype(np.int32))
             for q in (STATE_B, STATE_S, STATE_BS)}
    products: dict[tuple[int, int], sparse.csr_matrix] = {}

    def product(qi: int, qj: int) -> sparse.csr_matrix:
        if (qi, qj) not in products:
            if (qj, qi) in products:
                products[(qi, qj)] = products[(qj, qi)].T.tocsr()
            else:
                products[(qi, qj)] = (masks[qi] @ masks[qj].T).tocsr()
        return products[(qi, qj)]

    rows, cols, kinds, weights = [], [], [], []
    for ty, (qi, qj) in enumerate(_TYPE_PAIRS):
        upper = sparse.triu(product(qi, qj), k=1).tocoo()
        rows.append(upper.row.astype(np.int64))
        cols.append(upper.col.astype(np.int64))
        kinds.append(np.full(upper.nnz, ty, dtype=np.int8))
        weights.append(upper.data.astype(np.int64))
    i = np.concatenate(rows)
    j = np.concatenate(cols)
    types = np.concatenate(kinds)
    w = np.concatenate(weights)
    order = np.lexsort((types, j, i))
    return CoOccurrenceGraph(states.stock, states.investors, states.n_days,
                             states.theta, states.margins,
                             i[order], j[order], types[order], w[order])


def _exact_tail_start(t: int, ki: int, kj: int, n: int) -> float:
    num = math.comb(ki, n) * math.comb(t - ki, kj - n)
    return float(Fraction(num, math.comb(t, kj)))


def hypergeom_pvalues(t: int, ki, kj, n) -> np.ndarray:
    """P(X >= n) with X ~ Hypergeometric(t, ki, kj), vectorized.

    Sums the upper tail with a multiplicative pmf recurrence from an exact
    (or, for large t, log-gamma) starting term; absolute error stays below
    1e-12 everywhere in the supported range.
    """
    ki = np.asarray(ki, dtype=np.int64)
    kj = np.asarray(kj, dtype=np.int64)
    n = np.asarray(n, dtype=np.int64)
    t = int(t)
    if t < 0 or np.any(ki < 0) or np.any(kj < 0) or np.any(n < 0):
        raise ValueError("hypergeometric counts must be non-negative")
    if np.any(ki > t) or np.any(kj > t) or np.any(n > np.minimum(ki, kj)):
        raise ValueError("hypergeometric margins are inconsistent with t")

    p = np.ones(ki.shape, dtype=float)
    lo = np.maximum(0, ki + kj - t)
    alive = n > lo                      # n <= support minimum means p = 1
    if not np.any(alive):
        return p

    term = np.zeros(ki.shape, dtype=float)
    start = np.flatnonzero(alive)
    if t <= _EXACT_START_MAX_T:
        for ix in start:
            term[ix] = _exact_tail_start(t, int(ki[ix]), int(kj[ix]), int(n[ix]))
    else:
        def log_comb(a, b):
            return gammaln(a + 1.0) - gammaln(b + 1.0) - gammaln(a - b + 1.0)
        a, b, c = ki[start].astype(float), kj[start].astype(float), n[start].astype(float)
        term[start] = np.exp(log_comb(a, c) + log_comb(t - a, b - c) - log_comb(t, b))

    acc = term.copy()
    x = n.copy()
    x_max = np.minimum(ki, kj)
    live = alive & (x < x_max)
    while np.any(live):
        ix = np.flatnonzero(live)
        xf = x[ix].astype(float)
        ratio = ((ki[ix] - xf) * (kj[ix] - xf)
                 / ((xf + 1.0) * (t - ki[ix] - kj[ix] + xf + 1.0)))
        term[ix] *= ratio
        acc[ix] += term[ix]
        x[ix] += 1
        live[ix] = x[ix] < x_max[ix]
    p[alive] = np.minimum(acc[alive], 1.0)
    return p


@lru_cache(maxsize=None)
def _pvalue_cached(t: int, ki: int, kj: int, n: int) -> float:
    return float(hypergeom_pvalues(t, np.array([ki]), np.array([kj]),
                                   np.array([n]))[0])


def hypergeom_pvalue(t: int, ki: int, kj: int, n: int) -> float:
    """Scalar upper-tail p-value, memoized on (t, ki, kj, n)."""
    return _pvalue_cached(int(t), int(ki), int(kj), int(n))


@dataclass
class EdgeTable:
    """Co-occurrence multigraph with a hypergeometric p-value per edge."""

    stock: str
    investors: tuple[str, ...]
    n_days: int
    theta: float
    i: np.ndarray
    j: np.ndarray
    types: np.ndarray
    weights: np.ndarray
    pvalues: np.ndarray


def compute_pvalues(graph: CoOccurrenceGraph, n_workers: int = 1) -> EdgeTable:
    """Attach one-sided hypergeometric p-values to every materialized edge.

    Deduplicates (ki, kj, weight) keys before evaluating and splits the unique
    keys on fixed chunk boundaries, so the result is byte-identical for any
    worker count.
    """
    col_i = np.array([_MARGIN_COL[qi] for qi, _qj in _TYPE_PAIRS])[graph.types]
    col_j = np.array([_MARGIN_COL[qj] for _qi, qj in _TYPE_PAIRS])[graph.types]
    ki = graph.margins[graph.i, col_i]
    kj = graph.margins[graph.j, col_j]
    if graph.weights.size == 0:
        pvalues = np.empty(0, dtype=float)
    else:
        keys = np.column_stack((ki, kj, graph.weights))
        unique, inverse = np.unique(keys, axis=0, return_inverse=True)
        out = np.empty(unique.shape[0], dtype=float)
        chunks = [slice(s, min(s + _PVALUE_CHUNK, unique.shape[0]))
                  for s in range(0, unique.shape[0], _PVALUE_CHUNK)]

        def run(sl: slice) -> None:
            out[sl] = hypergeom_pvalues(graph.n_days, unique[sl, 0],
                                        unique[sl, 1], unique[sl, 2])

        if n_workers <= 1 or len(chunks) <= 1:
            for sl in chunks:
                run(sl)
        else:
            with ThreadPoolExecutor(max_workers=n_workers) as pool:
                list(pool.map(run, chunks))
        pvalues = out[inverse.ravel()]
    return EdgeTable(graph.stock, graph.investors, graph.n_days, graph.theta,
                     graph.i, graph.j, graph.types, graph.weights, pvalues)


def bonferroni_threshold(n: int, alpha: float = 0.01,
                         type_count: int = 9) -> float:
    """Family-wise threshold 2*alpha / (type_count * n * (n - 1))."""
    if n < 2:
        raise ValueError("need at least two investors to form a pair")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie strictly between 0 and 1, got {alpha}")
    return 2.0 * alpha / (type_count * n * (n - 1))


def fdr_threshold(p_values, alpha: float, n_test: int) -> float | None:
    """Benjamini-Hochberg cut-off, or None when no p-value qualifies.

    `n_test` is the full count of potential comparisons, which can exceed the
    number of materialized p-values (absent pairs implicitly score p = 1).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie strictly between 0 and 1, got {alpha}")
    p = np.sort(np.asarray(p_values, dtype=float))
    if n_test < p.size:
        raise ValueError("n_test cannot be smaller than the p-value count")
    if p.size == 0:
        return None
    ranks = np.arange(1, p.size + 1, dtype=float)
    ok = np.flatnonzero(p <= ranks * (alpha / n_test))
    if ok.size == 0:
        return None
    return float(p[ok[-1]])


@dataclass
class ValidatedNetwork:
    """Edges whose p-values survived a multiple-comparison correction."""

    stock: str
    investors: tuple[str, ...]
    n_days: int
    theta: float
    correction: str
    alpha: float | None
    threshold: float | None
    n_tests: int
    i: np.ndarray
    j: np.ndarray
    types: np.ndarray
    weights: np.ndarray
    pvalues: np.ndarray
    null_model: str = "hypergeometric"

    @property
    def n_edges(self) -> int:
        return int(self.weights.size)

    def edges(self) -> Iterator[tuple[str, str, str, int, float]]:
        for e in range(self.n_edges):
            yield (self.investors[self.i[e]], self.investors[self.j[e]],
                   LINK_TYPES[self.types[e]], int(self.weights[e]),
                   float(self.pvalues[e]))

    @property
    def type_counts(self) -> dict[str, int]:
        counts = np.bincount(self.types, minlength=len(LINK_TYPES))
        return {name: int(counts[k]) for k, name in enumerate(LINK_TYPES)}

    @property
    def non_isolated(self) -> tuple[str, ...]:
        used = np.unique(np.concatenate((self.i, self.j)))
        return tuple(sorted(self.investors[k] for k in used))

    def adjacency(self) -> dict[str, set[str]]:
        """Undirected neighbor sets, link types collapsed."""
        out: dict[str, set[str]] = {}
        for e in range(self.n_edges):
            a = self.investors[self.i[e]]
            b = self.investors[self.j[e]]
            out.setdefault(a, set()).add(b)
            out.setdefault(b, set()).add(a)
        return out


def validate_edges(table: EdgeTable, correction: str = "bonferroni",
                   alpha: float = 0.01, threshold: float | None = None,
                   type_count: int = 9) -> ValidatedNetwork:
    """Keep the edges that survive the requested correction.

    `correction` is one of "bonferroni", "fdr" or "fixed" (the latter takes an
    explicit `threshold`).  The test count is always type_count * C(N, 2),
    regardless of how many pairs materialized an edge.
    """
    n = len(table.investors)
    n_tests = type_count * n * (n - 1) // 2
    if correction == "bonferroni":
        cut = bonferroni_threshold(n, alpha, type_count)
    elif correction == "fdr":
        cut = fdr_threshold(table.pvalues, alpha, n_tests)
    elif correction == "fixed":
        if threshold is None or not 0.0 < threshold <= 1.0:
            raise ValueError("fixed correction needs a threshold in (0, 1]")
        cut = float(threshold)
        alpha = None
    else:
        raise ValueError(f"unknown correction {correction!r}")
    if cut is None:
        keep = np.zeros(table.pvalues.shape, dtype=bool)
    else:
        keep = table.pvalues <= cut
    return ValidatedNetwork(table.stock, table.investors, table.n_days,
                            table.theta, correction, alpha, cut, n_tests,
                            table.i[keep], table.j[keep], table.types[keep],
                            table.weights[keep], table.pvalues[keep])


def diagonal_subnetwork(network: ValidatedNetwork) -> ValidatedNetwork:
    """Restrict to same-state links (bb, ss, bsbs)."""
    diag = np.array([LINK_TYPES.index(ty) for ty in DIAGONAL_TYPES])
    keep = np.isin(network.types, diag)
    return replace(network, i=network.i[keep], j=network.j[keep],
                   types=network.types[keep], weights=network.weights[keep],
                   pvalues=network.pvalues[keep])


@dataclass(frozen=True)
class SweepPoint:
    threshold: float
    n_edges: int
    metric: float


@dataclass
class SweepResult:
    points: tuple[SweepPoint, ...]
    best_threshold: float | None


def threshold_sweep(table: EdgeTable, thresholds,
                    downstream: Callable[[ValidatedNetwork], float]
                    ) -> SweepResult:
    """Validate at each fixed threshold and score the result downstream.

    Returns per-threshold edge counts and metric values plus the threshold
    with the highest metric (ties go to the strictest threshold).
    """
    points = []
    for thr in sorted(set(float(t) for t in thresholds)):
        net = validate_edges(table, correction="fixed", threshold=thr)
        points.append(SweepPoint(thr, net.n_edges, float(downstream(net))))
    best = None
    if points:
        best = max(points, key=lambda pt: (pt.metric, -pt.threshold)).threshold
    return SweepResult(tuple(points), best)


def write_network(network: ValidatedNetwork, out_dir: Path,
                  name: str) -> tuple[Path, Path]:
    """Write the edge list CSV and a JSON manifest; returns both paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{name}_edges.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["investor_i", "investor_j", "type", "weight",
                         "p_value", "validated"])
        for a, b, ty, w, p in network.edges():
            writer.writerow([a, b, ty, fmt(w), fmt(p), "true"])
    manifest = {
        "stock": network.stock,
        "null_model": network.null_model,
        "n_investors": len(network.investors),
        "n_days": network.n_days,
        "theta": network.theta,
        "correction": network.correction,
        "alpha": network.alpha,
        "threshold": network.threshold,
        "n_tests": network.n_tests,
        "n_edges": network.n_edges,
        "n_non_isolated": len(network.non_isolated),
        "type_counts": network.type_counts,
    }
    manifest_path = out_dir / f"{name}_manifest.json"
    dump_json(manifest, manifest_path)
    return csv_path, manifest_path
