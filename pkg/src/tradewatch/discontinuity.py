"""Rewarding-cluster analysis: discontinuity classes, chi-squared tests, suspect ranking.

Given a label-aligned cluster timeline, this module finds the cluster closest
to the direction target in feature space, classifies its final-window members
against their own history (hard / soft discontinuous vs continuous), compares
the rewarding cluster's composition against every other cluster with a
chi-squared statistic, and ranks the discontinuous traders for review.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import date
from pathlib import Path

import numpy as np
from scipy import stats as sps

from .errors import DataError
from .features import FeatureCube, FeatureVector
from .kmeans import ClusterTimeline
from .market_data import PseEvent, TransactionPanel
from .util import fmt

CONTINUOUS = "continuous"
SOFT = "soft_discontinuous"
HARD = "hard_discontinuous"


@dataclass(frozen=True, slots=True)
class DiscontinuityLabel:
    investor: str
    category: str                 # continuous | soft_discontinuous | hard_discontinuous
    in_rewarding_cluster: bool


@dataclass(frozen=True, slots=True)
class SuspectEntry:
    rank: int
    investor: str
    investor_type: str
    category: str
    score: float                  # in (0, 1]
    shares_bought: float          # reference-period buy volume
    directionality: float | None  # (Vb - Vs) / (Vb + Vs); None when no share volume
    expected_profit: float        # Euro, marked to the offer price


@dataclass(frozen=True, slots=True)
class SuspectReport:
    stock: str
    direction: str
    offer_price: float
    ref_start: date
    ref_end: date
    entries: tuple[SuspectEntry, ...]


def _target(direction: str) -> np.ndarray:
    if direction == "buy":
        return np.array([1.0, 1.0, 1.0])
    if direction == "sell":
        # reflect the signed features; concentration stays positive
        return np.array([-1.0, 1.0, -1.0])
    raise ValueError(f"unknown trade direction {direction!r}")


# -- rewarding cluster ---------------------------------------------------------------


def rewarding_cluster(centroids: np.ndarray, direction: str) -> int:
    """Label of the centroid nearest the direction target; ties take the smallest."""
    d2 = ((np.asarray(centroids, dtype=float) - _target(direction)) ** 2).sum(axis=1)
    return int(np.argmin(d2)) + 1


def score(x: FeatureVector | np.ndarray, direction: str) -> float:
    """exp(-distance to the direction target); 1 exactly at the target."""
    if isinstance(x, FeatureVector):
        x = np.array([x.A, x.a, x.E])
    d = float(np.linalg.norm(np.asarray(x, dtype=float) - _target(direction)))
    return math.exp(-d)


# -- discontinuity classification ---------------------------------------------------------------


def classify_discontinuity(timeline: ClusterTimeline, rewarding: int,
                           panel: TransactionPanel, stock: str
                           ) -> dict[int, tuple[DiscontinuityLabel, ...]]:
    """Classify every final-window cluster member against its own history.

    Membership history counts only windows disjoint from the final one; the
    hard/soft split looks at trading on the stock over [t1, final start).
    Returns per-cluster tuples sorted by investor id.
    """
    grid = timeline.grid
    final_fit = timeline.fits[-1]
    final_start = grid.windows[final_fit.window][0]
    past_fits = [f for f in timeline.fits[:-1]
                 if grid.windows[f.window][1] < final_start]
    if not past_fits:
        raise DataError("reference period too short: no past window is disjoint "
                        "from the final one")

    past_members: dict[int, set[str]] = {lab: set()
                                         for lab in range(1, timeline.k + 1)}
    for f in past_fits:
        for lab, members in f.members().items():
            past_members[lab] |= members

    # trade history runs [t1, final window start); panel days via dates, since
    # the panel calendar may extend beyond the grid
    lo = panel.day_index(grid.t1)
    hi = panel.day_index(grid.calendar[final_start])
    universe = panel.stock_universe(stock)
    mats = panel.stock_matrices(stock, universe)
    traded = (mats["buy_volume"] + mats["sell_volume"]
              + mats["buy_amount"] + mats["sell_amount"])
    traded_before = {inv: bool(traded[i, lo:hi].sum() > 0)
                     for i, inv in enumerate(universe)}

    out: dict[int, tuple[DiscontinuityLabel, ...]] = {}
    for lab, members in final_fit.members().items():
        entries = []
        for inv in sorted(members):
            if inv in past_members[lab]:
                category = CONTINUOUS
            elif traded_before.get(inv, False):
                category = SOFT
            else:
                category = HARD
            entries.append(DiscontinuityLabel(inv, category, lab == rewarding))
        out[lab] = tuple(entries)
    return out


# -- chi-squared comparison ---------------------------------------------------------------


def chi_squared_compare(counts1: tuple[int, int], counts2: tuple[int, int],
                        *, textbook: bool = False) -> tuple[float, float]:
    """Compare two (n_continuous, n_discontinuous) pairs; 1-dof chi-squared p-value.

    The default statistic sums (n1 - n2)^2 / (n1 + n2) over the two labels,
    with a zero-sum label contributing 0. `textbook=True` switches to the
    standard two-sample homogeneity statistic for sensitivity checks.
    """
    c1, d1 = counts1
    c2, d2 = counts2
    if c1 + d1 <= 0 or c2 + d2 <= 0:
        raise ValueError("each cluster needs at least one labeled investor")
    if textbook:
        n = c1 + d1 + c2 + d2
        margins = (c1 + d1) * (c2 + d2) * (c1 + c2) * (d1 + d2)
        stat = n * (c1 * d2 - c2 * d1) ** 2 / margins if margins > 0 else 0.0
    else:
        stat = 0.0
        for x, y in ((c1, c2), (d1, d2)):
            if x + y > 0:
                stat += (x - y) ** 2 / (x + y)
    return float(stat), float(sps.chi2.sf(stat, 1))


@dataclass(frozen=True, slots=True)
class ClusterTest:
    other: int
    counts_rewarding: tuple[int, int]
    counts_other: tuple[int, int]
    statistic: float
    p_value: float
    rejected: bool


@dataclass(frozen=True, slots=True)
class ClusterComparison:
    rewarding: int
    level: float
    tests: tuple[ClusterTest, ...]
    all_rejected: bool


def _counts(labels: tuple[DiscontinuityLabel, ...]) -> tuple[int, int]:
    n_cont = sum(1 for lab in labels if lab.category == CONTINUOUS)
    return (n_cont, len(labels) - n_cont)


def compare_rewarding_vs_all(by_cluster: dict[int, tuple[DiscontinuityLabel, ...]],
                             rewarding: int, level: float = 0.01,
                             *, textbook: bool = False) -> ClusterComparison:
    """K-1 chi-squared tests of the rewarding cluster against every other one."""
    ref = _counts(by_cluster[rewarding])
    tests = []
    for lab in sorted(by_cluster):
        if lab == rewarding:
            continue
        other = _counts(by_cluster[lab])
        stat, p = chi_squared_compare(ref, other, textbook=textbook)
        tests.append(ClusterTest(lab, ref, other, stat, p, p < level))
    return ClusterComparison(rewarding, level, tuple(tests),
                             all(t.rejected for t in tests))


# -- stability guard ---------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class StabilityCheck:
    label: int
    max_displacement: float
    bound: float
    ok: bool


def rewarding_stability(timeline: ClusterTimeline, label: int,
                        bound: float = 0.25) -> StabilityCheck:
    """Max displacement of one centroid across consecutive fitted windows."""
    track = [f.clustering.centroids[label - 1] for f in timeline.fits]
    steps = [float(np.linalg.norm(b - a)) for a, b in zip(track, track[1:])]
    worst = max(steps, default=0.0)
    return StabilityCheck(label, worst, bound, worst <= bound)


# -- suspect ranking ---------------------------------------------------------------


def rank_suspects(suspects: list[DiscontinuityLabel] | tuple[DiscontinuityLabel, ...],
                  cube: FeatureCube, panel: TransactionPanel, pse: PseEvent
                  ) -> SuspectReport:
    """Rank suspects by score, then reference-period shares bought, then id."""
    ref_start, ref_end = pse.reference_period
    day_mask = np.array([ref_start <= d <= ref_end for d in panel.calendar])
    universe = panel.stock_universe(pse.stock)
    mats = panel.stock_matrices(pse.stock, universe)
    pos = {inv: i for i, inv in enumerate(universe)}
    final = cube.grid.m - 1

    rows = []
    for lab in suspects:
        x = cube.vector(lab.investor, final)
        s = score(x, pse.direction)
        i = pos.get(lab.investor)
        if i is None:
            vb = vs = ab = sa = 0.0
        else:
            vb = float(mats["buy_volume"][i, day_mask].sum())
            vs = float(mats["sell_volume"][i, day_mask].sum())
            ab = float(mats["buy_amount"][i, day_mask].sum())
            sa = float(mats["sell_amount"][i, day_mask].sum())
        direction = (vb - vs) / (vb + vs) if vb + vs > 0 else None
        profit = pse.offer_price * (vb - vs) - (ab - sa)
        rows.append((lab, s, vb, direction, profit))

    rows.sort(key=lambda r: (-r[1], -r[2], r[0].investor))
    entries = tuple(
        SuspectEntry(rank, lab.investor, panel.investor_types.get(lab.investor, "?"),
                     lab.category, s, vb, direction, profit)
        for rank, (lab, s, vb, direction, profit) in enumerate(rows, start=1))
    return SuspectReport(pse.stock, pse.direction, pse.offer_price,
                         ref_start, ref_end, entries)


def write_suspect_csv(report: SuspectReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "investor", "type", "score", "shares_bought",
                    "directionality", "expected_profit"])
        for e in report.entries:
            w.writerow([e.rank, e.investor, e.investor_type, fmt(e.score),
                        fmt(e.shares_bought),
                        "" if e.directionality is None else fmt(e.directionality),
                        fmt(e.expected_profit)])
    return path
