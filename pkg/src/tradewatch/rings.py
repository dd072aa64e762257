"""Cluster-level suspicion metrics around the event window.

For each cluster of the validated network: mean directionality and mean
expected profit over the pre-event window, a ranked suspect table, the
containment of one partition's clusters in another's, seed-based neighbor
exploration, and text activity rasters for analyst review.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .community import Partition
from .errors import DataError
from .market_data import TransactionPanel
from .svn import (STATE_B, STATE_BS, STATE_S, StateMatrix, ValidatedNetwork,
                  directionality)
from .util import dump_json, fmt

RASTER_CHARS = {0: ".", STATE_B: "B", STATE_S: "S", STATE_BS: "X"}
MAX_SEED_DEPTH = 3


@dataclass(frozen=True)
class DeltaBarStats:
    """One trader's aggregate buy/sell activity inside the event window."""

    investor: str
    v_buy: float
    v_sell: float
    a_buy: float
    a_sell: float

    @property
    def active(self) -> bool:
        return self.v_buy + self.v_sell > 0

    @property
    def directionality(self) -> float | None:
        if not self.active:
            return None
        return directionality(self.v_buy, self.v_sell)

    def profit(self, offer_price: float) -> float:
        return (offer_price * (self.v_buy - self.v_sell)
                - (self.a_buy - self.a_sell))


def delta_bar_stats(panel: TransactionPanel, stock: str,
                    investors: Iterable[str],
                    delta_bar: tuple[date, date]) -> dict[str, DeltaBarStats]:
    """Sum volumes and amounts per investor over the inclusive date window."""
    start, end = delta_bar
    if start > end:
        raise DataError(f"event window starts {start} after it ends {end}")
    investors = tuple(investors)
    mats = panel.stock_matrices(stock, investors)
    mask = np.array([start <= d <= end for d in panel.calendar])
    if not mask.any():
        raise DataError("event window does not overlap the panel calendar")
    out = {}
    for k, inv in enumerate(investors):
        out[inv] = DeltaBarStats(
            inv,
            float(mats["buy_volume"][k, mask].sum()),
            float(mats["sell_volume"][k, mask].sum()),
            float(mats["buy_amount"][k, mask].sum()),
            float(mats["sell_amount"][k, mask].sum()))
    return out


def mean_directionality(stats: Iterable[DeltaBarStats]
                        ) -> tuple[float | None, int]:
    """(R_C, active count): mean over members active in the window.

    Members without window activity carry no directionality and are excluded
    from the mean; R_C is None when nobody is active.
    """
    values = [s.directionality for s in stats if s.active]
    if not values:
        return None, 0
    return float(np.mean(values)), len(values)


def cluster_profit(stats: Iterable[DeltaBarStats],
                   offer_price: float) -> float:
    """Mean expected profit over all members (inactive ones contribute 0)."""
    if offer_price <= 0:
        raise ValueError(f"offer price must be positive, got {offer_price}")
    profits = [s.profit(offer_price) for s in stats]
    if not profits:
        return 0.0
    return float(np.mean(profits))


@dataclass
class ClusterDossier:
    """Per-cluster review sheet: membership, types, R_C and profit."""

    cluster: int
    members: tuple[str, ...]
    n_active: int
    member_types: dict[str, int]
    r_c: float | None
    pi_c: float
    pi_c_active: float | None

    @property
    def n_members(self) -> int:
        return len(self.members)


def build_dossier(cluster: int, members: Iterable[str],
                  panel: TransactionPanel, stock: str,
                  delta_bar: tuple[date, date],
                  offer_price: float) -> ClusterDossier:
    members = tuple(sorted(members))
    stats = delta_bar_stats(panel, stock, members, delta_bar)
    ordered = [stats[m] for m in members]
    r_c, n_active = mean_directionality(ordered)
    pi_c = cluster_profit(ordered, offer_price)
    active = [s for s in ordered if s.active]
    pi_c_active = (float(np.mean([s.profit(offer_price) for s in active]))
                   if active else None)
    types: dict[str, int] = {}
    for m in members:
        ty = panel.investor_types.get(m, "?")
        types[ty] = types.get(ty, 0) + 1
    return ClusterDossier(cluster, members, n_active, types, r_c, pi_c,
                          pi_c_active)


def build_dossiers(partition: Partition, panel: TransactionPanel, stock: str,
                   delta_bar: tuple[date, date],
                   offer_price: float) -> list[ClusterDossier]:
    return [build_dossier(cid, partition.members(cid), panel, stock,
                          delta_bar, offer_price)
            for cid in range(1, partition.n_clusters + 1)]


@dataclass(frozen=True)
class SuspectClusterRow:
    dossier: ClusterDossier
    suspect: bool


@dataclass
class SuspectClusterReport:
    """Clusters above the report floor, most directional and profitable first."""

    rows: tuple[SuspectClusterRow, ...]
    r_floor: float
    report_floor: float
    n_flagged_clusters: int
    n_flagged_members: int
    n_flagged_active: int


def suspect_clusters(dossiers: Iterable[ClusterDossier],
                     r_floor: float = 0.9,
                     report_floor: float = 0.5) -> SuspectClusterReport:
    """Rank clusters by (R_C, pi_C) and flag those with R_C >= r_floor.

    Clusters with undefined R_C (nobody active in the window) are excluded;
    only clusters with R_C > report_floor appear in the report at all.
    """
    kept = [d for d in dossiers if d.r_c is not None and d.r_c > report_floor]
    kept.sort(key=lambda d: (-d.r_c, -d.pi_c, d.cluster))
    rows = tuple(SuspectClusterRow(d, d.r_c >= r_floor) for d in kept)
    flagged = [row.dossier for row in rows if row.suspect]
    return SuspectClusterReport(
        rows, r_floor, report_floor, len(flagged),
        sum(d.n_members for d in flagged),
        sum(d.n_active for d in flagged))


@dataclass
class ContainmentMatrix:
    """How the column partition's clusters spread over the row partition's."""

    row_labels: tuple[str, ...]         # row partition clusters + "unassigned"
    col_labels: tuple[str, ...]
    matrix: np.ndarray                  # columns each sum to 1


def containment_matrix(rows: Partition, cols: Partition) -> ContainmentMatrix:
    """Entry (i, j): fraction of column-cluster j's nodes in row-cluster i.

    Nodes of the column partition missing from the row partition fall into a
    trailing "unassigned" row, so every column still sums to one.
    """
    row_ids = list(range(1, rows.n_clusters + 1))
    col_ids = list(range(1, cols.n_clusters + 1))
    matrix = np.zeros((len(row_ids) + 1, len(col_ids)))
    for j, cid in enumerate(col_ids):
        members = cols.members(cid)
        for node in members:
            i = rows.assignment.get(node)
            matrix[len(row_ids) if i is None else i - 1, j] += 1
        matrix[:, j] /= len(members)
    return ContainmentMatrix(
        tuple(str(i) for i in row_ids) + ("unassigned",),
        tuple(str(j) for j in col_ids), matrix)


@dataclass(frozen=True)
class NeighborEntry:
    investor: str
    hop: int
    links: tuple[tuple[str, str, int, float], ...]  # (peer, type, weight, p)
    directionality: float | None
    profit: float | None


@dataclass
class SeedExploration:
    seed: str
    depth: int
    status: str                         # "isolated" | "connected"
    neighbors: tuple[NeighborEntry, ...]


def seed_neighbors(network: ValidatedNetwork, seed: str, depth: int = 1,
                   stats: Mapping[str, DeltaBarStats] | None = None,
                   offer_price: float | None = None) -> SeedExploration:
    """Breadth-first neighbors of a seed trader on the validated network.

    Each discovered trader carries the validated edges that tie it to the
    previously discovered layer and, when window stats are supplied, its
    directionality and expected profit.  A seed with no validated edge gets
    status "isolated".
    """
    if seed not in set(network.investors):
        raise DataError(f"unknown seed investor {seed!r}")
    if not 1 <= depth <= MAX_SEED_DEPTH:
        raise ValueError(f"depth must be between 1 and {MAX_SEED_DEPTH}")
    edges_by_node: dict[str, list[tuple[str, str, int, float]]] = {}
    for a, b, ty, w, p in network.edges():
        edges_by_node.setdefault(a, []).append((b, ty, w, p))
        edges_by_node.setdefault(b, []).append((a, ty, w, p))
    if seed not in edges_by_node:
        return SeedExploration(seed, depth, "isolated", ())

    hop_of = {seed: 0}
    frontier = [seed]
    order: list[str] = []
    for hop in range(1, depth + 1):
        discovered = sorted({peer for node in frontier
                             for peer, *_rest in edges_by_node.get(node, ())
                             if peer not in hop_of})
        for node in discovered:
            hop_of[node] = hop
        order.extend(discovered)
        frontier = discovered
    entries = []
    for node in order:
        links = tuple(sorted((peer, ty, w, p)
                             for peer, ty, w, p in edges_by_node.get(node, ())
                             if hop_of.get(peer, depth + 1) < hop_of[node]))
        r, profit = None, None
        if stats is not None and node in stats:
            r = stats[node].directionality
            if offer_price is not None:
                profit = stats[node].profit(offer_price)
        entries.append(NeighborEntry(node, hop_of[node], links, r, profit))
    return SeedExploration(seed, depth, "connected", tuple(entries))


@dataclass
class Raster:
    """Text activity grid: one row per member, one state character per day."""

    members: tuple[str, ...]
    days: tuple[date, ...]
    grid: tuple[str, ...]
    markers: dict[str, date]


def activity_raster(states: StateMatrix, members: Iterable[str],
                    markers: Mapping[str, date] | None = None) -> Raster:
    """Render members' daily states as rows of {., B, S, X} characters."""
    members = tuple(members)
    index = {inv: k for k, inv in enumerate(states.investors)}
    missing = [m for m in members if m not in index]
    if missing:
        raise DataError(f"traders absent from the state matrix: {missing[:5]}")
    markers = dict(markers or {})
    for name, day in markers.items():
        if day not in states.days:
            raise DataError(f"marker {name!r} date {day} outside the calendar")
    grid = tuple("".join(RASTER_CHARS[int(c)] for c in states.codes[index[m]])
                 for m in members)
    return Raster(members, states.days, grid, markers)


def write_raster(raster: Raster, out_dir: Path, name: str) -> tuple[Path, Path]:
    """Write the character grid and a JSON legend; returns both paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid_path = out_dir / f"{name}_raster.txt"
    grid_path.write_text("".join(f"{row}\n" for row in raster.grid),
                         encoding="utf-8")
    legend = {
        "chars": {".": "inactive", "B": "buy", "S": "sell", "X": "mixed"},
        "members": list(raster.members),
        "days": [d.isoformat() for d in raster.days],
        "markers": {k: v.isoformat() for k, v in sorted(raster.markers.items())},
    }
    legend_path = out_dir / f"{name}_legend.json"
    dump_json(legend, legend_path)
    return grid_path, legend_path


def write_dossiers(report: SuspectClusterReport, path: Path) -> None:
    """CSV of the ranked cluster table (one row per reported cluster)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cluster", "n_members", "n_active", "types",
                         "r_c", "pi_c", "suspect"])
        for row in report.rows:
            d = row.dossier
            types = ", ".join(f"{ty}:{n}" for ty, n in sorted(d.member_types.items()))
            writer.writerow([d.cluster, d.n_members, d.n_active, types,
                             fmt(d.r_c), fmt(d.pi_c),
                             "true" if row.suspect else "false"])
