"""Per-window trading features feeding the clustering stage.

For each (investor, window) on a stock j the engine computes signed Euro
turnover A, magnitudo a (share of the investor's market-wide gross turnover
spent on j), and max Euro exposure E (the cumulative position at the day of
largest absolute position inside the window). A and E are then rescaled per
investor by their maxima across the window grid into [-1, 1].
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError
from .market_data import PositionSeries, TransactionPanel, build_positions
from .util import dump_json, fmt


@dataclass(frozen=True, slots=True)
class WindowGrid:
    """Rolling windows over a trading calendar, each `length` days, last ends at t_S."""

    calendar: tuple[date, ...]
    length: int
    step: int
    t1: date
    t_s: date
    windows: tuple[tuple[int, int], ...]  # inclusive (start, end) calendar indices

    @property
    def m(self) -> int:
        return len(self.windows)

    def window_dates(self, w: int) -> tuple[date, date]:
        s, e = self.windows[w]
        return (self.calendar[s], self.calendar[e])

    def window_ends(self) -> list[date]:
        return [self.calendar[e] for _, e in self.windows]

    def overlaps(self, w1: int, w2: int) -> bool:
        (s1, e1), (s2, e2) = self.windows[w1], self.windows[w2]
        return not (e1 < s2 or e2 < s1)


def make_windows(calendar: Sequence[date], length: int, step: int,
                 t1: date, t_s: date) -> WindowGrid:
    """Build the rolling grid: forward from t1, plus a final window ending at t_S.

    Windows advance from the first `length` days after t1 in increments of
    `step`; if the regular grid does not land on t_S, one extra window ending
    exactly at t_S is appended so the most recent data is always covered.
    """
    if length < 1 or step < 1:
        raise ValueError("length and step must be >= 1")
    calendar = tuple(calendar)
    try:
        i1 = calendar.index(t1)
        i_s = calendar.index(t_s)
    except ValueError as exc:
        raise DataError(f"window bounds must be trading days: {exc}") from None
    if i1 >= i_s:
        raise ValueError("t1 must precede t_S")
    span = i_s - i1 + 1
    if length > span:
        raise DataError(f"window length {length} exceeds {span} available days")
    ends = list(range(i1 + length - 1, i_s + 1, step))
    if ends[-1] != i_s:
        ends.append(i_s)
    if len(ends) < 2:
        raise DataError("fewer than 2 windows fit the period")
    windows = tuple((e - length + 1, e) for e in ends)
    return WindowGrid(calendar, length, step, t1, t_s, windows)


@dataclass(frozen=True, slots=True)
class FeatureVector:
    A: float
    a: float
    E: float
    active: bool


class FeatureCube:
    """Feature arrays for (window x investor) on one stock.

    `A` and `E` hold raw Euro values until rescale() is applied; `active` marks
    the investors that enter the clustering for each window.
    """

    def __init__(self, stock: str, grid: WindowGrid, investors: tuple[str, ...],
                 A: np.ndarray, a: np.ndarray, E: np.ndarray, active: np.ndarray,
                 rescaled: bool = False):
        self.stock = stock
        self.grid = grid
        self.investors = investors
        self.A = A
        self.a = a
        self.E = E
        self.active = active
        self.rescaled = rescaled
        self._pos = {inv: i for i, inv in enumerate(investors)}

    def vector(self, investor: str, w: int) -> FeatureVector:
        i = self._pos[investor]
        return FeatureVector(float(self.A[w, i]), float(self.a[w, i]),
                             float(self.E[w, i]), bool(self.active[w, i]))

    def active_points(self, w: int) -> tuple[tuple[str, ...], np.ndarray]:
        """Ids and (k, 3) feature matrix of the investors clustered in window w."""
        mask = self.active[w]
        ids = tuple(inv for inv, keep in zip(self.investors, mask) if keep)
        pts = np.column_stack([self.A[w, mask], self.a[w, mask], self.E[w, mask]])
        return ids, pts


class _StockContext:
    """Prefix sums shared by all windows of one stock."""

    def __init__(self, panel: TransactionPanel, stock: str,
                 positions: PositionSeries | None = None):
        self.universe = panel.stock_universe(stock)
        mats = panel.stock_matrices(stock, self.universe)
        gross_j = mats["buy_amount"] + mats["sell_amount"]
        net_j = mats["buy_amount"] - mats["sell_amount"]
        gross_all = panel.gross_amount_matrix(self.universe)
        # prefix sums with a leading zero column for O(1) window aggregation
        self.net_ps = np.concatenate(
            [np.zeros((len(self.universe), 1)), np.cumsum(net_j, axis=1)], axis=1)
        self.gross_j_ps = np.concatenate(
            [np.zeros((len(self.universe), 1)), np.cumsum(gross_j, axis=1)], axis=1)
        self.gross_all_ps = np.concatenate(
            [np.zeros((len(self.universe), 1)), np.cumsum(gross_all, axis=1)], axis=1)
        if positions is None:
            positions = build_positions(panel, stock)
        self.alpha = positions.rows(self.universe)

    def window_features(self, start: int, end: int):
        """Raw (A, a, E, active) arrays for the inclusive day range [start, end]."""
        A = self.net_ps[:, end + 1] - self.net_ps[:, start]
        gross_j = self.gross_j_ps[:, end + 1] - self.gross_j_ps[:, start]
        denom = self.gross_all_ps[:, end + 1] - self.gross_all_ps[:, start]
        sub = self.alpha[:, start:end + 1]
        peak = np.argmax(np.abs(sub), axis=1)  # earliest day on ties
        E = sub[np.arange(sub.shape[0]), peak]
        market_active = denom > 0
        active = market_active & ((gross_j > 0) | (np.abs(E) > 0))
        a = np.where(active, np.divide(gross_j, denom, out=np.zeros_like(gross_j),
                                       where=denom > 0), 0.0)
        if np.any(active & (denom <= 0)):
            raise AssertionError("active investor with zero market gross turnover")
        A = np.where(active, A, 0.0)
        E = np.where(active, E, 0.0)
        return A, a, E, active


def raw_features(panel: TransactionPanel, positions: PositionSeries | None,
                 stock: str, window: tuple[int, int]):
    """Raw per-investor features for one window given as (start, end) day indexes.

    Returns (investors, A, a, E, active) where the arrays follow the stock
    universe order.
    """
    ctx = _StockContext(panel, stock, positions)
    A, a, E, active = ctx.window_features(*window)
    return ctx.universe, A, a, E, active


def build_cube(panel: TransactionPanel, stock: str, grid: WindowGrid,
               positions: PositionSeries | None = None) -> FeatureCube:
    """Raw FeatureCube over the whole grid (call rescale() before clustering)."""
    ctx = _StockContext(panel, stock, positions)
    n, m = len(ctx.universe), grid.m
    A = np.zeros((m, n))
    a = np.zeros((m, n))
    E = np.zeros((m, n))
    active = np.zeros((m, n), dtype=bool)
    for w, (s, e) in enumerate(grid.windows):
        A[w], a[w], E[w], active[w] = ctx.window_features(s, e)
    return FeatureCube(stock, grid, ctx.universe, A, a, E, active, rescaled=False)


def rescale(cube: FeatureCube, include_final: bool = True) -> FeatureCube:
    """Rescale A and E per investor by their max absolute value across windows.

    A zero maximum maps to zero. With include_final=False the maxima exclude
    the last window (pre-event history only) and rescaled values saturate at
    +/-1 so the ranges still hold.
    """
    if cube.rescaled:
        return cube
    rows = slice(None) if include_final else slice(0, cube.grid.m - 1)
    max_A = np.max(np.abs(cube.A[rows]), axis=0)
    max_E = np.max(np.abs(cube.E[rows]), axis=0)
    A = np.divide(cube.A, max_A, out=np.zeros_like(cube.A), where=max_A > 0)
    E = np.divide(cube.E, max_E, out=np.zeros_like(cube.E), where=max_E > 0)
    if not include_final:
        A = np.clip(A, -1.0, 1.0)
        E = np.clip(E, -1.0, 1.0)
    return FeatureCube(cube.stock, cube.grid, cube.investors, A, cube.a.copy(), E,
                       cube.active.copy(), rescaled=True)


# -- export ---------------------------------------------------------------------


def write_cube(cube: FeatureCube, out_dir, name: str = "features"
               ) -> tuple[Path, Path]:
    """CSV (investor, window_end, A, a, E, active) plus a JSON grid sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{name}.csv"
    ends = cube.grid.window_ends()
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["investor", "window_end", "A", "a", "E", "active"])
        for wi, end in enumerate(ends):
            for ii, inv in enumerate(cube.investors):
                w.writerow([inv, end.isoformat(), fmt(float(cube.A[wi, ii])),
                            fmt(float(cube.a[wi, ii])), fmt(float(cube.E[wi, ii])),
                            int(cube.active[wi, ii])])
    sidecar = out_dir / f"{name}_grid.json"
    dump_json({
        "stock": cube.stock,
        "length": cube.grid.length,
        "step": cube.grid.step,
        "t1": cube.grid.t1.isoformat(),
        "t_s": cube.grid.t_s.isoformat(),
        "window_ends": [d.isoformat() for d in ends],
        "rescaled": cube.rescaled,
        "investors": len(cube.investors),
    }, sidecar)
    return csv_path, sidecar
