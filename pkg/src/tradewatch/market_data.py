"""Transaction panels: CSV parsing, venue aggregation, position proxies, PSE registry."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .util import dump_json, file_sha256, fmt

INVESTOR_TYPES = ("H", "IF", "L")
EVENT_TYPES = ("takeover_bid",)

# mandatory CSV columns; price columns are optional and not carried into the panel
REQUIRED_COLS = (
    "investor_id", "investor_type", "venue", "stock", "day",
    "buy_volume", "sell_volume", "buy_amount", "sell_amount",
    "buy_contracts", "sell_contracts",
)
PRICE_COLS = ("first_price", "last_price", "min_price", "max_price",
              "avg_buy_price", "avg_sell_price")


@dataclass(frozen=True, slots=True)
class TransactionRecord:
    """One venue-level daily record for an (investor, stock) pair."""

    investor: str
    investor_type: str
    venue: str
    stock: str
    day: date
    buy_volume: float
    sell_volume: float
    buy_amount: float
    sell_amount: float
    buy_contracts: int = 0
    sell_contracts: int = 0


@dataclass(frozen=True, slots=True)
class PseEvent:
    """A price-sensitive event (currently takeover bids only)."""

    stock: str
    event_type: str
    pse_date: date
    ref_start: date
    offer_price: float
    direction: str

    @property
    def reference_period(self) -> tuple[date, date]:
        """The pre-event window (ref_start .. pse_date, inclusive)."""
        return (self.ref_start, self.pse_date)


@dataclass(slots=True)
class ParseReport:
    rows_kept: int = 0
    rows_dropped: int = 0
    diagnostics: list[str] = field(default_factory=list)


@dataclass(slots=True)
class ParseOptions:
    error_budget: int = 0
    calendar: Sequence[date] = ()
    delimiter: str = ","


class TransactionPanel:
    """Venue-aggregated daily panel holding N investors, M stocks, S calendar days.

    Cells are indexed by (investor, stock, day) with buy/sell volumes (shares),
    amounts (Euro) and contract counts summed across venues. Immutable after
    construction and safe for concurrent reads.
    """

    def __init__(self, records: Iterable[TransactionRecord],
                 extra_calendar: Sequence[date] = ()):
        cells: dict[tuple[str, str, date], list[float]] = {}
        types: dict[str, str] = {}
        days: set[date] = set(extra_calendar)
        for rec in records:
            if rec.investor_type not in INVESTOR_TYPES:
                raise DataError(f"unknown investor type {rec.investor_type!r}")
            prev = types.setdefault(rec.investor, rec.investor_type)
            if prev != rec.investor_type:
                raise DataError(
                    f"investor {rec.investor} has conflicting types {prev}/{rec.investor_type}")
            key = (rec.investor, rec.stock, rec.day)
            cell = cells.setdefault(key, [0.0] * 6)
            cell[0] += rec.buy_volume
            cell[1] += rec.sell_volume
            cell[2] += rec.buy_amount
            cell[3] += rec.sell_amount
            cell[4] += rec.buy_contracts
            cell[5] += rec.sell_contracts
            days.add(rec.day)

        self.investors: tuple[str, ...] = tuple(sorted(types))
        self.investor_types: dict[str, str] = {i: types[i] for i in self.investors}
        self.calendar: tuple[date, ...] = tuple(sorted(days))
        self.stocks: tuple[str, ...] = tuple(sorted({k[1] for k in cells}))

        inv_pos = {v: i for i, v in enumerate(self.investors)}
        stk_pos = {v: i for i, v in enumerate(self.stocks)}
        day_pos = {v: i for i, v in enumerate(self.calendar)}
        keys = sorted(cells, key=lambda k: (stk_pos[k[1]], inv_pos[k[0]], day_pos[k[2]]))
        n = len(keys)
        self._inv = np.fromiter((inv_pos[k[0]] for k in keys), dtype=np.int64, count=n)
        self._stk = np.fromiter((stk_pos[k[1]] for k in keys), dtype=np.int64, count=n)
        self._day = np.fromiter((day_pos[k[2]] for k in keys), dtype=np.int64, count=n)
        self._qty = (np.array([cells[k] for k in keys], dtype=np.float64)
                     if n else np.zeros((0, 6)))
        # row ranges per stock (rows are sorted by stock first)
        bounds = np.searchsorted(self._stk, np.arange(len(self.stocks) + 1))
        self._stock_rows: dict[str, tuple[int, int]] = {
            stock: (int(bounds[s]), int(bounds[s + 1]))
            for s, stock in enumerate(self.stocks)}
        self._inv_pos = inv_pos
        self._day_pos = day_pos

    # -- shape ---------------------------------------------------------------

    @property
    def n_investors(self) -> int:
        return len(self.investors)

    @property
    def n_days(self) -> int:
        return len(self.calendar)

    @property
    def n_cells(self) -> int:
        return int(self._qty.shape[0])

    def day_index(self, day: date) -> int:
        try:
            return self._day_pos[day]
        except KeyError:
            raise DataError(f"day {day} not in panel calendar") from None

    # -- views -----------------------------------------------------------------

    def stock_universe(self, stock: str) -> tuple[str, ...]:
        """Investors with at least one record on the stock, in roster order."""
        lo, hi = self._require_stock(stock)
        idx = np.unique(self._inv[lo:hi])
        return tuple(self.investors[i] for i in idx)

    def stock_matrices(self, stock: str, investors: Sequence[str] | None = None
                       ) -> dict[str, np.ndarray]:
        """Dense (len(investors), n_days) arrays for one stock.

        Keys: buy_volume, sell_volume, buy_amount, sell_amount, buy_contracts,
        sell_contracts. Rows follow `investors` (default: the stock universe).
        """
        lo, hi = self._require_stock(stock)
        if investors is None:
            investors = self.stock_universe(stock)
        pos = {inv: i for i, inv in enumerate(investors)}
        rows = np.fromiter((pos.get(self.investors[i], -1) for i in self._inv[lo:hi]),
                           dtype=np.int64, count=hi - lo)
        keep = rows >= 0
        rows, cols = rows[keep], self._day[lo:hi][keep]
        names = ("buy_volume", "sell_volume", "buy_amount", "sell_amount",
                 "buy_contracts", "sell_contracts")
        out = {}
        for q, name in enumerate(names):
            m = np.zeros((len(investors), self.n_days))
            np.add.at(m, (rows, cols), self._qty[lo:hi, q][keep])
            out[name] = m
        return out

    def gross_amount_matrix(self, investors: Sequence[str]) -> np.ndarray:
        """(n, S) Euro gross turnover (buys + sells) summed over every stock."""
        pos = {inv: i for i, inv in enumerate(investors)}
        rows = np.fromiter((pos.get(self.investors[i], -1) for i in self._inv),
                           dtype=np.int64, count=self.n_cells)
        keep = rows >= 0
        m = np.zeros((len(investors), self.n_days))
        np.add.at(m, (rows[keep], self._day[keep]),
                  self._qty[keep, 2] + self._qty[keep, 3])
        return m

    def active_day_counts(self, stock: str) -> dict[str, int]:
        """Distinct days with any activity on the stock, per investor."""
        lo, hi = self._require_stock(stock)
        active = self._qty[lo:hi, 0:4].sum(axis=1) > 0
        counts: dict[str, int] = {}
        for i in self._inv[lo:hi][active]:
            inv = self.investors[i]
            counts[inv] = counts.get(inv, 0) + 1
        return counts

    def iter_cells(self):
        """Yield aggregated cells as (investor, stock, day, 6-tuple of quantities)."""
        for r in range(self.n_cells):
            yield (self.investors[self._inv[r]], self.stocks[self._stk[r]],
                   self.calendar[self._day[r]], tuple(self._qty[r]))

    def restrict(self, investors: Iterable[str]) -> TransactionPanel:
        """Sub-panel keeping only the given investors (all their stocks)."""
        keep = set(investors)
        recs = [TransactionRecord(inv, self.investor_types[inv], "*", stock, day,
                                  q[0], q[1], q[2], q[3], int(q[4]), int(q[5]))
                for inv, stock, day, q in self.iter_cells() if inv in keep]
        return TransactionPanel(recs, extra_calendar=self.calendar)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TransactionPanel):
            return NotImplemented
        return (self.investors == other.investors
                and self.investor_types == other.investor_types
                and self.calendar == other.calendar
                and self.stocks == other.stocks
                and np.array_equal(self._inv, other._inv)
                and np.array_equal(self._stk, other._stk)
                and np.array_equal(self._day, other._day)
                and np.array_equal(self._qty, other._qty))

    def _require_stock(self, stock: str) -> tuple[int, int]:
        if stock not in self._stock_rows:
            raise DataError(f"stock {stock!r} not in panel")
        return self._stock_rows[stock]


@dataclass(slots=True)
class ParseResult:
    panel: TransactionPanel
    report: ParseReport


def _open_text(source):
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8", newline="")
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8"))
    return source


def _nonneg(row: dict[str, str], col: str) -> float:
    v = float(row[col])
    if not np.isfinite(v) or v < 0:
        raise ValueError(f"{col} must be a finite non-negative number, got {row[col]!r}")
    return v


def parse_transactions(source, options: ParseOptions | None = None) -> ParseResult:
    """Parse a transaction CSV into a venue-aggregated panel.

    Malformed rows are collected as line-numbered diagnostics and dropped; the
    parse fails only when their count exceeds ``options.error_budget``. A
    duplicated (investor, stock, venue, day) key rejects the whole file.
    """
    opts = options or ParseOptions()
    report = ParseReport()
    records: list[TransactionRecord] = []
    seen: set[tuple[str, str, str, date]] = set()
    first_type: dict[str, str] = {}
    fh = _open_text(source)
    try:
        reader = csv.DictReader(fh, delimiter=opts.delimiter)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLS if c not in header]
        if missing:
            raise DataError(f"missing required columns: {', '.join(missing)}")
        for row in reader:
            line = reader.line_num
            try:
                rec = _parse_row(row)
            except (ValueError, KeyError) as exc:
                report.rows_dropped += 1
                report.diagnostics.append(f"line {line}: {exc}")
                continue
            dup_key = (rec.investor, rec.stock, rec.venue, rec.day)
            if dup_key in seen:
                raise DataError(
                    f"line {line}: duplicate record for {dup_key}; file rejected")
            seen.add(dup_key)
            prev = first_type.setdefault(rec.investor, rec.investor_type)
            if prev != rec.investor_type:
                report.rows_dropped += 1
                report.diagnostics.append(
                    f"line {line}: investor {rec.investor} type {rec.investor_type} "
                    f"conflicts with earlier {prev}")
                continue
            records.append(rec)
            report.rows_kept += 1
    finally:
        if isinstance(source, (str, Path, bytes)):
            fh.close()
    if report.rows_dropped > opts.error_budget:
        raise DataError(
            f"{report.rows_dropped} malformed rows exceed error budget "
            f"{opts.error_budget}: " + "; ".join(report.diagnostics[:5]))
    if not records:
        report.diagnostics.append("empty panel")
    panel = TransactionPanel(records, extra_calendar=opts.calendar)
    return ParseResult(panel, report)


def _parse_row(row: dict[str, str]) -> TransactionRecord:
    investor = (row["investor_id"] or "").strip()
    if not investor:
        raise ValueError("blank investor_id")
    itype = (row["investor_type"] or "").strip()
    if itype not in INVESTOR_TYPES:
        raise ValueError(f"unknown investor_type {itype!r}")
    day = date.fromisoformat((row["day"] or "").strip())
    bv = _nonneg(row, "buy_volume")
    sv = _nonneg(row, "sell_volume")
    ba = _nonneg(row, "buy_amount")
    sa = _nonneg(row, "sell_amount")
    bc = _nonneg(row, "buy_contracts")
    sc = _nonneg(row, "sell_contracts")
    if bc != int(bc) or sc != int(sc):
        raise ValueError("contract counts must be integers")
    if bv > 0 and ba <= 0:
        raise ValueError("buy_volume > 0 requires buy_amount > 0")
    if sv > 0 and sa <= 0:
        raise ValueError("sell_volume > 0 requires sell_amount > 0")
    prices = {c: float(row[c]) for c in PRICE_COLS
              if c in row and (row[c] or "").strip() != ""}
    if "min_price" in prices and "max_price" in prices:
        for avg in ("avg_buy_price", "avg_sell_price"):
            if avg in prices and not (
                    prices["min_price"] - 1e-9 <= prices[avg] <= prices["max_price"] + 1e-9):
                raise ValueError(f"{avg} outside [min_price, max_price]")
    return TransactionRecord(investor, itype, (row["venue"] or "").strip(),
                             (row["stock"] or "").strip(), day,
                             bv, sv, ba, sa, int(bc), int(sc))


# -- positions -----------------------------------------------------------------


@dataclass(slots=True)
class PositionSeries:
    """Cumulative net Euro position per investor on one stock, over the calendar."""

    stock: str
    investors: tuple[str, ...]
    calendar: tuple[date, ...]
    values: np.ndarray  # (n_investors, n_days)

    def series(self, investor: str) -> np.ndarray:
        return self.values[self.investors.index(investor)]

    def rows(self, investors: Sequence[str]) -> np.ndarray:
        pos = {inv: i for i, inv in enumerate(self.investors)}
        return self.values[[pos[inv] for inv in investors]]


def build_positions(panel: TransactionPanel, stock: str) -> PositionSeries:
    """Cumulative (buy_amount - sell_amount) from panel start, zero before it.

    Investors with no trades in the stock get an identically zero series.
    """
    mats = panel.stock_matrices(stock, panel.investors)
    flows = mats["buy_amount"] - mats["sell_amount"]
    return PositionSeries(stock, panel.investors, panel.calendar,
                          np.cumsum(flows, axis=1))


# -- activity restriction --------------------------------------------------------


@dataclass(slots=True)
class RestrictionResult:
    panel: TransactionPanel
    kept: tuple[str, ...]
    retained_volume_share: float


def restrict_active(panel: TransactionPanel, stock: str, min_days: int
                    ) -> RestrictionResult:
    """Keep investors with >= min_days distinct active days on the stock.

    The retained volume share is measured on the stock's total share volume.
    """
    if min_days < 1:
        raise ValueError("min_days must be >= 1")
    counts = panel.active_day_counts(stock)
    kept = tuple(inv for inv in panel.stock_universe(stock)
                 if counts.get(inv, 0) >= min_days)
    mats = panel.stock_matrices(stock)
    total = mats["buy_volume"].sum() + mats["sell_volume"].sum()
    if total > 0:
        universe = panel.stock_universe(stock)
        pos = {inv: i for i, inv in enumerate(universe)}
        rows = [pos[inv] for inv in kept]
        kept_vol = mats["buy_volume"][rows].sum() + mats["sell_volume"][rows].sum()
        share = float(kept_vol / total)
    else:
        share = 0.0
    return RestrictionResult(panel.restrict(kept), kept, share)


# -- PSE registry ---------------------------------------------------------------


@dataclass(slots=True)
class RegistryLoad:
    events: list[PseEvent]
    diagnostics: list[str]


def load_pse_registry(source) -> RegistryLoad:
    """Load price-sensitive events; invalid rows are rejected with diagnostics.

    Expected columns: stock, type, pse_date, ref_start, offer_price, direction.
    An optional ref_end column, when present, must equal pse_date.
    """
    events: list[PseEvent] = []
    diags: list[str] = []
    fh = _open_text(source)
    try:
        reader = csv.DictReader(fh)
        for row in reader:
            line = reader.line_num
            try:
                etype = (row["type"] or "").strip()
                if etype not in EVENT_TYPES:
                    raise ValueError(f"unknown event type {etype!r}")
                pse_date = date.fromisoformat((row["pse_date"] or "").strip())
                ref_start = date.fromisoformat((row["ref_start"] or "").strip())
                if (row.get("ref_end") or "").strip():
                    ref_end = date.fromisoformat(row["ref_end"].strip())
                    if ref_end != pse_date:
                        raise ValueError("reference period must end at pse_date")
                if ref_start > pse_date:
                    raise ValueError("ref_start after pse_date")
                price = float(row["offer_price"])
                if not (price > 0):
                    raise ValueError("offer_price must be > 0")
                direction = (row["direction"] or "").strip()
                if direction not in ("buy", "sell"):
                    raise ValueError(f"bad direction {direction!r}")
                if etype == "takeover_bid" and direction != "buy":
                    raise ValueError("takeover_bid implies direction buy")
                events.append(PseEvent((row["stock"] or "").strip(), etype,
                                       pse_date, ref_start, price, direction))
            except (ValueError, KeyError) as exc:
                diags.append(f"line {line}: {exc}")
    finally:
        if isinstance(source, (str, Path, bytes)):
            fh.close()
    events.sort(key=lambda e: (e.pse_date, e.stock))
    return RegistryLoad(events, diags)


# -- snapshot IO ------------------------------------------------------------------

SNAPSHOT_HEADER = REQUIRED_COLS


def write_panel_snapshot(panel: TransactionPanel, out_dir, name: str = "panel"
                         ) -> tuple[Path, Path]:
    """Write the canonical panel CSV plus a JSON manifest; returns both paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{name}.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SNAPSHOT_HEADER)
        for inv, stock, day, q in panel.iter_cells():
            w.writerow([inv, panel.investor_types[inv], "*", stock, day.isoformat(),
                        fmt(q[0]), fmt(q[1]), fmt(q[2]), fmt(q[3]),
                        fmt(int(q[4])), fmt(int(q[5]))])
    manifest_path = out_dir / f"{name}_manifest.json"
    dump_json({
        "rows": panel.n_cells,
        "investors": panel.n_investors,
        "stocks": len(panel.stocks),
        "days": panel.n_days,
        "calendar": [d.isoformat() for d in panel.calendar],
        "sha256": file_sha256(csv_path),
    }, manifest_path)
    return csv_path, manifest_path


def read_panel_snapshot(csv_path, manifest_path=None) -> TransactionPanel:
    """Load a snapshot written by write_panel_snapshot.

    When the manifest is given, its calendar is applied so trading days without
    records survive the round trip.
    """
    calendar: Sequence[date] = ()
    if manifest_path is not None:
        meta = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
        calendar = [date.fromisoformat(d) for d in meta.get("calendar", [])]
    result = parse_transactions(str(csv_path), ParseOptions(calendar=calendar))
    return result.panel
