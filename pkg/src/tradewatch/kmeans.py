"""Two-phase k-means, elbow K selection, and dynamic clustering with label alignment.

The fit runs Lloyd batch iterations (assign all, recompute) until stable, then
an online phase that accepts single-point reassignments only when the exact
loss change is negative. Dynamic clustering warm-starts each window from the
previous window's centroids and aligns labels by exhaustive Jaccard matching.
"""

from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .features import FeatureCube, WindowGrid
from .util import dump_json

_MOVE_EPS = 1e-12  # strict-decrease guard for online moves


@dataclass(slots=True)
class Clustering:
    """K-means result; labels take values 1..K, centroids[k-1] belongs to label k."""

    centroids: np.ndarray   # (K, d)
    labels: np.ndarray      # (n,) ints in 1..K
    loss: float
    n_iter: int
    converged: bool
    batch_losses: tuple[float, ...] = ()

    @property
    def k(self) -> int:
        return int(self.centroids.shape[0])

    def members(self, ids: Sequence[str]) -> dict[int, set[str]]:
        """Label -> member-id sets for points named by `ids`."""
        out: dict[int, set[str]] = {k: set() for k in range(1, self.k + 1)}
        for name, lab in zip(ids, self.labels):
            out[int(lab)].add(name)
        return out


def _loss_of(points: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    diff = points - centroids[labels - 1]
    return float(np.sum(diff * diff))


def _assign(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1) + 1


def _repair_empty(points, centroids, labels) -> bool:
    """Re-seed each empty cluster at the point farthest from its own centroid.

    Points that are the sole member of their cluster are not eligible, so one
    repair never re-empties another cluster.
    """
    repaired = False
    k_total = centroids.shape[0]
    for k in range(1, k_total + 1):
        if np.any(labels == k):
            continue
        dist = np.linalg.norm(points - centroids[labels - 1], axis=1)
        sizes = np.bincount(labels, minlength=k_total + 1)
        dist[sizes[labels] <= 1] = -1.0
        far = int(np.argmax(dist))
        centroids[k - 1] = points[far]
        labels[far] = k
        repaired = True
    return repaired


def _fit_once(points: np.ndarray, k: int, centroids: np.ndarray, max_iter: int
              ) -> Clustering:
    n = points.shape[0]
    centroids = centroids.astype(float).copy()
    labels = _assign(points, centroids)
    _repair_empty(points, centroids, labels)
    batch_losses = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        for k_ in range(1, k + 1):
            mask = labels == k_
            if np.any(mask):
                centroids[k_ - 1] = points[mask].mean(axis=0)
        batch_losses.append(_loss_of(points, centroids, labels))
        new_labels = _assign(points, centroids)
        _repair_empty(points, centroids, new_labels)
        if np.array_equal(new_labels, labels):
            converged = True
            break
        labels = new_labels

    # online refinement: single-point moves with exact loss deltas
    sizes = np.array([(labels == k_).sum() for k_ in range(1, k + 1)], dtype=float)
    for k_ in range(1, k + 1):
        mask = labels == k_
        if np.any(mask):
            centroids[k_ - 1] = points[mask].mean(axis=0)
    online_iters = 0
    rows = np.arange(n)
    while online_iters < max_iter:
        online_iters += 1
        # Screen all points at once against the sweep-start state; only the
        # screened candidates are re-checked exactly (state moves under them).
        d2_all = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        a_all = labels - 1
        own = d2_all[rows, a_all]
        with np.errstate(divide="ignore", invalid="ignore"):
            gain_all = np.where(sizes[a_all] > 1,
                                sizes[a_all] / (sizes[a_all] - 1.0) * own, -np.inf)
        cost_all = sizes / (sizes + 1.0) * d2_all
        cost_all[rows, a_all] = np.inf
        candidates = np.flatnonzero(cost_all.min(axis=1) - gain_all < -_MOVE_EPS)
        moved = False
        for i in candidates:
            a = int(labels[i]) - 1
            if sizes[a] <= 1:
                continue
            x = points[i]
            d2 = ((centroids - x) ** 2).sum(axis=1)
            gain_out = sizes[a] / (sizes[a] - 1.0) * d2[a]
            cost_in = sizes / (sizes + 1.0) * d2
            cost_in[a] = np.inf
            b = int(np.argmin(cost_in))
            delta = cost_in[b] - gain_out
            if delta < -_MOVE_EPS:
                centroids[a] = (sizes[a] * centroids[a] - x) / (sizes[a] - 1.0)
                centroids[b] = (sizes[b] * centroids[b] + x) / (sizes[b] + 1.0)
                sizes[a] -= 1.0
                sizes[b] += 1.0
                labels[i] = b + 1
                moved = True
        if not moved:
            break
        # exactify before the next screening pass: incremental updates drift
        for k_ in range(1, k + 1):
            mask = labels == k_
            if np.any(mask):
                centroids[k_ - 1] = points[mask].mean(axis=0)
    loss = _loss_of(points, centroids, labels)
    return Clustering(centroids, labels, loss, it + online_iters, converged,
                      tuple(batch_losses))


def kmeans_fit(points: np.ndarray, k: int, *, init: np.ndarray | None = None,
               seed: int | None = None, max_iter: int = 300, n_restarts: int = 1
               ) -> Clustering:
    """Fit K clusters; with init centroids runs once, else n_restarts seeded starts.

    Deterministic given (seed, n_restarts). Returns the restart with lowest loss.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2:
        raise ValueError("points must be a 2-d array")
    n = points.shape[0]
    if k < 1:
        raise ValueError("K must be >= 1")
    if k > n:
        raise ValueError(f"K={k} exceeds {n} points")
    if init is not None:
        init = np.asarray(init, dtype=float)
        if init.shape != (k, points.shape[1]):
            raise ValueError("init centroids have wrong shape")
        return _fit_once(points, k, init, max_iter)
    root = seed if isinstance(seed, np.random.SeedSequence) \
        else np.random.SeedSequence(seed)
    best: Clustering | None = None
    for child in root.spawn(max(1, n_restarts)):
        rng = np.random.default_rng(child)
        starts = points[rng.choice(n, size=k, replace=False)]
        fit = _fit_once(points, k, starts, max_iter)
        if best is None or fit.loss < best.loss - _MOVE_EPS:
            best = fit
    return best


# -- elbow ----------------------------------------------------------------------


def elbow_curve(points: np.ndarray, k_max: int, *, seed: int | None = None,
                n_restarts: int = 4, max_iter: int = 100) -> np.ndarray:
    """E_K = mean squared distance to the assigned centroid, for K = 1..min(K_max, n)."""
    points = np.asarray(points, dtype=float)
    k_top = min(k_max, points.shape[0])
    children = np.random.SeedSequence(seed).spawn(k_top)
    curve = np.empty(k_top)
    for k in range(1, k_top + 1):
        fit = kmeans_fit(points, k, seed=children[k - 1],
                         n_restarts=n_restarts, max_iter=max_iter)
        curve[k - 1] = fit.loss / points.shape[0]
    return curve


def elbow_from_curve(curve: Sequence[float], rel_tol: float = 0.05) -> int:
    """Smallest K whose following decrements all fall below rel_tol of the K=1 variance.

    Decrements are read off the normalised curve E_K / E_1.  A ratio against
    the current E_K instead would never settle on well-separated isotropic
    blobs: each extra centroid keeps removing a near-constant share of
    whatever loss remains, so the local ratio stays above any useful
    tolerance no matter how clean the structure is.
    """
    curve = list(curve)
    base = curve[0] if curve else 0.0
    decr = [((curve[i] - curve[i + 1]) / base) if base > 0 else 0.0
            for i in range(len(curve) - 1)]
    for k in range(1, len(curve)):
        if all(d < rel_tol for d in decr[k - 1:]):
            return k
    warnings.warn(f"no elbow below rel_tol={rel_tol}; returning K_max={len(curve)}")
    return len(curve)


def elbow_select(points: np.ndarray, k_max: int, rel_tol: float = 0.05, *,
                 seed: int | None = None, n_restarts: int = 4,
                 max_iter: int = 100) -> int:
    if k_max < 2:
        raise ValueError("K_max must be >= 2")
    points = np.asarray(points, dtype=float)
    if points.shape[0] and bool(np.all(points == points[0])):
        return 1
    curve = elbow_curve(points, k_max, seed=seed, n_restarts=n_restarts,
                        max_iter=max_iter)
    return elbow_from_curve(curve, rel_tol)


def select_global_k(window_ks: Sequence[int]) -> int:
    """Mean of the per-window Ks rounded half away from zero."""
    if not window_ks:
        raise ValueError("need at least one window K")
    return int(math.floor(float(np.mean(window_ks)) + 0.5))


# -- label alignment ----------------------------------------------------------------


def jaccard(set_a, set_b) -> float:
    a, b = set(set_a), set(set_b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


@lru_cache(maxsize=None)
def _perm_table(k: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(k))), dtype=np.int64)


@dataclass(slots=True)
class AlignResult:
    permutation: tuple[int, ...]   # permutation[k-1] = old curr label matched to k
    mapping: dict[int, int]        # old curr label -> aligned label
    jaccard: dict[int, float]      # aligned label -> Jaccard vs previous window
    score: float


def align_labels(prev_sets: Mapping[int, set], curr_sets: Mapping[int, set]
                 ) -> AlignResult:
    """Match current labels to previous ones, maximizing summed per-label Jaccard.

    Exhaustive over all K! permutations (K <= 10); mathematical ties resolve to
    the lexicographically smallest permutation. Membership is compared on the
    investors present in both windows.
    """
    if set(prev_sets) != set(curr_sets):
        raise ValueError("label sets differ between windows")
    k = len(prev_sets)
    if k > 10:
        raise ValueError("K > 10: exhaustive alignment disabled; lower K in config")
    labels = sorted(prev_sets)
    universe = set().union(*prev_sets.values()) & set().union(*curr_sets.values())
    prev = [prev_sets[lab] & universe for lab in labels]
    curr = [curr_sets[lab] & universe for lab in labels]
    jmat = np.array([[jaccard(p, c) for c in curr] for p in prev])
    perms = _perm_table(k)
    scores = jmat[np.arange(k)[None, :], perms].sum(axis=1)
    best = float(scores.max())
    cand = np.nonzero(scores >= best - 1e-9)[0]
    if len(cand) > 1:
        exact = [math.fsum(jmat[i, perms[c, i]] for i in range(k)) for c in cand]
        top = max(exact)
        cand = [c for c, e in zip(cand, exact) if e == top]
    perm_idx = perms[int(cand[0])]
    permutation = tuple(labels[j] for j in perm_idx)
    mapping = {labels[j]: labels[i] for i, j in enumerate(perm_idx)}
    jac = {labels[i]: float(jmat[i, perm_idx[i]]) for i in range(k)}
    score = float(math.fsum(jac.values()))
    return AlignResult(permutation, mapping, jac, score)


def relabel(clustering: Clustering, mapping: Mapping[int, int]) -> Clustering:
    """Apply a label mapping, permuting centroid rows to match; loss unchanged."""
    k = clustering.k
    new_centroids = np.empty_like(clustering.centroids)
    for old, new in mapping.items():
        new_centroids[new - 1] = clustering.centroids[old - 1]
    new_labels = np.array([mapping[int(l)] for l in clustering.labels])
    return Clustering(new_centroids, new_labels, clustering.loss,
                      clustering.n_iter, clustering.converged,
                      clustering.batch_losses)


# -- dynamic clustering ---------------------------------------------------------------


@dataclass(slots=True)
class WindowFit:
    window: int
    investors: tuple[str, ...]
    clustering: Clustering
    jaccard_prev: dict[int, float] | None
    permutation: tuple[int, ...] | None

    def members(self) -> dict[int, set[str]]:
        return self.clustering.members(self.investors)


@dataclass(slots=True)
class ClusterTimeline:
    stock: str
    k: int
    grid: WindowGrid
    fits: list[WindowFit]
    skipped: list[int]
    warnings: list[str]

    @property
    def final(self) -> WindowFit:
        return self.fits[-1]

    def centroid_norms(self) -> list[np.ndarray]:
        """Per fitted window, distance of each centroid from the origin."""
        return [np.linalg.norm(f.clustering.centroids, axis=1) for f in self.fits]


def dynamic_cluster(cube: FeatureCube, k: int, *, seed: int = 0,
                    n_restarts: int = 16, max_iter: int = 300) -> ClusterTimeline:
    """Cluster every window, warm-starting and label-aligning across the grid."""
    fits: list[WindowFit] = []
    skipped: list[int] = []
    warns: list[str] = []
    prev_centroids: np.ndarray | None = None
    prev_sets: dict[int, set] | None = None
    for w in range(cube.grid.m):
        ids, pts = cube.active_points(w)
        if len(ids) < k:
            skipped.append(w)
            warns.append(f"window {w}: {len(ids)} active investors < K={k}; skipped")
            continue
        if prev_centroids is None:
            fit = kmeans_fit(pts, k, seed=seed + w, n_restarts=n_restarts,
                             max_iter=max_iter)
        else:
            fit = kmeans_fit(pts, k, init=prev_centroids, max_iter=max_iter)
        sets = fit.members(ids)
        if prev_sets is not None:
            aligned = align_labels(prev_sets, sets)
            fit = relabel(fit, aligned.mapping)
            sets = fit.members(ids)
            fits.append(WindowFit(w, ids, fit, aligned.jaccard, aligned.permutation))
        else:
            fits.append(WindowFit(w, ids, fit, None, None))
        prev_centroids = fit.centroids
        prev_sets = sets
    if not fits:
        raise ValueError("no window had enough active investors to cluster")
    return ClusterTimeline(cube.stock, k, cube.grid, fits, skipped, warns)


# -- export -----------------------------------------------------------------------


def write_timeline(timeline: ClusterTimeline, out_dir, name: str = "timeline"
                   ) -> tuple[Path, Path]:
    """JSON per-window summary plus a CSV of (investor, window_end, label)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "stock": timeline.stock,
        "K": timeline.k,
        "skipped_windows": timeline.skipped,
        "warnings": timeline.warnings,
        "windows": [{
            "window": f.window,
            "end": timeline.grid.window_dates(f.window)[1].isoformat(),
            "n_investors": len(f.investors),
            "loss": f.clustering.loss,
            "centroids": [[float(v) for v in row] for row in f.clustering.centroids],
            "centroid_norms": [float(v) for v in
                               np.linalg.norm(f.clustering.centroids, axis=1)],
            "jaccard_prev": (None if f.jaccard_prev is None
                             else {str(k): v for k, v in sorted(f.jaccard_prev.items())}),
        } for f in timeline.fits],
    }
    json_path = out_dir / f"{name}.json"
    dump_json(payload, json_path)
    csv_path = out_dir / f"{name}_labels.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["investor", "window_end", "label"])
        for f in timeline.fits:
            end = timeline.grid.window_dates(f.window)[1].isoformat()
            for inv, lab in zip(f.investors, f.clustering.labels):
                w.writerow([inv, end, int(lab)])
    return json_path, csv_path
