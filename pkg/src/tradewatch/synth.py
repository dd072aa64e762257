"""Synthetic transaction panels with planted anomalies and ground truth.

Background traders act independently with persistent, type-specific styles:
households stick to one side of the book (a pole of `buy_propensity`),
investment firms work both sides across many stocks, and legal entities
place sporadic large block trades.  Independence across traders means the
co-occurrence validation should find nothing among them by construction,
while the persistent styles give the window features the stable cluster
structure seen on real panels.  On top of that the generator injects
individual insiders (silent on the stock, then buying heavily inside the
reference period) and rings (groups buying on shared days), and emits labels
for scoring what the pipelines recover.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import DataError
from .market_data import INVESTOR_TYPES, PseEvent, TransactionPanel, TransactionRecord
from .util import dump_json

INJECTION_KINDS = ("individual", "ring")
_MARKET_BIAS = (0.85, 0.15)     # buy share on rally / sell-off days


@dataclass(frozen=True)
class Injection:
    """One planted anomaly: a lone insider or a coordinated ring."""

    kind: str
    size: int = 1
    start_day: int = 0              # trading-day offset into the reference period
    volume: tuple[float, float] = (500.0, 2000.0)
    concentration: float = 1.0      # 1 = no other-stock trading while injecting
    shared_days: int = 15           # ring only: coordinated buy days


@dataclass(frozen=True)
class ScenarioConfig:
    """Full recipe for one synthetic market; a pure function of `seed`."""

    stock: str = "IMA0001"
    n_traders: int = 200
    n_days: int = 120
    start: date = date(2019, 1, 7)
    type_mix: tuple[float, float, float] = (0.85, 0.10, 0.05)
    activity: tuple[float, float] = (0.02, 0.15)
    buy_propensity: tuple[float, float] = (0.2, 0.8)
    mixed_share: float = 0.15
    volume: tuple[float, float] = (10.0, 500.0)
    n_side_stocks: int = 3
    side_activity: float = 0.03
    market_days: float = 0.0        # rate of market-wide direction days
    delta_bar: int = 20
    offer_price: float = 12.0
    price: float = 9.0
    injections: tuple[Injection, ...] = ()
    seed: int = 0


@dataclass(frozen=True)
class PlantedTrader:
    investor: str
    kind: str
    ring: int | None
    days: tuple[date, ...]
    expected_category: str
    expected_suspect: bool


@dataclass(frozen=True)
class GroundTruth:
    stock: str
    pse_date: date
    planted: tuple[PlantedTrader, ...]

    def investors(self) -> frozenset[str]:
        return frozenset(p.investor for p in self.planted)

    def rings(self) -> dict[int, tuple[str, ...]]:
        out: dict[int, list[str]] = {}
        for p in self.planted:
            if p.ring is not None:
                out.setdefault(p.ring, []).append(p.investor)
        return {rid: tuple(sorted(m)) for rid, m in sorted(out.items())}

    def by_kind(self, kind: str) -> tuple[str, ...]:
        return tuple(p.investor for p in self.planted if p.kind == kind)


def trading_calendar(start: date, n_days: int) -> tuple[date, ...]:
    """The next n_days weekdays from `start` inclusive."""
    out: list[date] = []
    d = start
    while len(out) < n_days:
        if d.weekday() < 5:
            out.append(d)
        d += timedelta(days=1)
    return tuple(out)


def _check_config(cfg: ScenarioConfig) -> None:
    if cfg.n_traders < 1 or cfg.n_days < 2:
        raise DataError("need at least 1 trader and 2 days")
    if not 1 <= cfg.delta_bar < cfg.n_days:
        raise DataError(f"reference period {cfg.delta_bar} must fit inside "
                        f"{cfg.n_days} days with history to spare")
    if abs(sum(cfg.type_mix) - 1.0) > 1e-9:
        raise DataError("type mix must sum to 1")
    n_injected = 0
    for inj in cfg.injections:
        if inj.kind not in INJECTION_KINDS:
            raise DataError(f"unknown injection kind {inj.kind!r}")
        if inj.kind == "ring" and inj.size < 2:
            raise DataError("ring size must be >= 2")
        if inj.kind == "individual" and inj.size != 1:
            raise DataError("individual injection must have size 1")
        span = cfg.delta_bar - inj.start_day
        if inj.start_day < 0 or span < 1:
            raise DataError(f"injection start day {inj.start_day} outside the "
                            f"{cfg.delta_bar}-day reference period")
        if inj.kind == "ring" and inj.shared_days > span:
            raise DataError(f"{inj.shared_days} shared days do not fit in the "
                            f"{span} days left after the injection start")
        if not 0.0 <= inj.concentration <= 1.0:
            raise DataError("concentration must lie in [0, 1]")
        n_injected += inj.size
    if n_injected >= cfg.n_traders:
        raise DataError(f"{n_injected} injected traders exceed the "
                        f"{cfg.n_traders}-trader universe")


class _Recorder:
    """Accumulates records for one trader with synthesized prices."""

    def __init__(self, investor: str, typ: str, cfg: ScenarioConfig,
                 rng: np.random.Generator, calendar: tuple[date, ...]):
        self.records: list[TransactionRecord] = []
        self._inv = investor
        self._typ = typ
        self._cfg = cfg
        self._rng = rng
        self._cal = calendar

    def trade(self, stock: str, day_idx: int, side: str,
              vol_range: tuple[float, float]) -> None:
        cfg = self._cfg
        vol = float(self._rng.integers(int(vol_range[0]),
                                       int(vol_range[1]) + 1))
        unit = cfg.price * (1.0 + 0.01 * self._rng.standard_normal())
        buy = side in ("buy", "both")
        sell = side in ("sell", "both")
        self.records.append(TransactionRecord(
            self._inv, self._typ, "MTA", stock, self._cal[day_idx],
            vol if buy else 0.0, vol if sell else 0.0,
            round(vol * unit, 2) if buy else 0.0,
            round(vol * unit, 2) if sell else 0.0,
            1 if buy else 0, 1 if sell else 0))


@dataclass(frozen=True)
class _TraderStyle:
    """Persistent per-trader behaviour drawn once from the investor type."""

    share: float                    # own buy propensity on directional days
    mix_prob: float                 # chance a trading day works both sides
    rate: float                     # daily activity rate on the target stock
    side_rate: float                # daily activity rate on each side stock
    volume: tuple[float, float]


def _draw_style(typ: str, cfg: ScenarioConfig,
                rng: np.random.Generator) -> _TraderStyle:
    """Households are one-sided, firms are two-sided, entities trade blocks."""
    lo, hi = cfg.buy_propensity
    vol_lo, vol_hi = cfg.volume
    if typ == "IF":
        return _TraderStyle(
            share=float(rng.uniform(0.45, 0.55)),
            mix_prob=min(1.0, 4.0 * cfg.mixed_share),
            rate=min(0.95, 3.0 * float(rng.uniform(*cfg.activity))),
            side_rate=min(0.95, 4.0 * cfg.side_activity),
            volume=(5.0 * vol_lo, 5.0 * vol_hi))
    pole = lo if rng.random() < 0.5 else hi
    share = float(np.clip(pole + rng.uniform(-0.05, 0.05), 0.01, 0.99))
    if typ == "L":
        return _TraderStyle(
            share=share, mix_prob=0.0,
            rate=0.4 * float(rng.uniform(*cfg.activity)),
            side_rate=cfg.side_activity,
            volume=(10.0 * vol_lo, 10.0 * vol_hi))
    return _TraderStyle(
        share=share, mix_prob=0.2 * cfg.mixed_share,
        rate=float(rng.uniform(*cfg.activity)),
        side_rate=cfg.side_activity,
        volume=(vol_lo, vol_hi))


def _noise_activity(rec: _Recorder, cfg: ScenarioConfig,
                    rng: np.random.Generator,
                    day_rates: dict[str, np.ndarray],
                    day_bias: np.ndarray, style: _TraderStyle) -> None:
    """Independent daily draws, one activity-rate vector per stock."""
    for stock, rates in day_rates.items():
        hits = np.flatnonzero(rng.random(cfg.n_days) < rates)
        for t in hits:
            bias = day_bias[t] if day_bias[t] >= 0 else style.share
            if rng.random() < style.mix_prob:
                side = "both"
            else:
                side = "buy" if rng.random() < bias else "sell"
            rec.trade(stock, int(t), side, style.volume)


def generate(cfg: ScenarioConfig) -> tuple[TransactionPanel, PseEvent,
                                           GroundTruth]:
    """Build the panel, the event, and the planted-trader labels."""
    _check_config(cfg)
    calendar = trading_calendar(cfg.start, cfg.n_days)
    ref_idx = cfg.n_days - cfg.delta_bar
    side_stocks = tuple(f"SIDE{m:02d}" for m in range(cfg.n_side_stocks))

    root = np.random.SeedSequence(cfg.seed)
    streams = root.spawn(1 + cfg.n_traders + len(cfg.injections))
    assign_rng = np.random.default_rng(streams[0])

    types = assign_rng.choice(INVESTOR_TYPES, size=cfg.n_traders,
                              p=cfg.type_mix)
    day_bias = np.full(cfg.n_days, -1.0)
    if cfg.market_days > 0:
        swept = assign_rng.random(cfg.n_days) < cfg.market_days
        day_bias[swept] = assign_rng.choice(_MARKET_BIAS, size=int(swept.sum()))

    n_injected = sum(inj.size for inj in cfg.injections)
    n_background = cfg.n_traders - n_injected
    ids = tuple(f"T{i:05d}" for i in range(cfg.n_traders))

    records: list[TransactionRecord] = []
    for i in range(n_background):
        rng = np.random.default_rng(streams[1 + i])
        rec = _Recorder(ids[i], str(types[i]), cfg, rng, calendar)
        style = _draw_style(str(types[i]), cfg, rng)
        rates = {cfg.stock: np.full(cfg.n_days, style.rate)}
        for side in side_stocks:
            rates[side] = np.full(cfg.n_days, style.side_rate)
        _noise_activity(rec, cfg, rng, rates, day_bias, style)
        records.extend(rec.records)

    planted: list[PlantedTrader] = []
    cursor = n_background
    ring_id = 0
    for inj_no, inj in enumerate(cfg.injections):
        inj_rng = np.random.default_rng(streams[1 + cfg.n_traders + inj_no])
        start = ref_idx + inj.start_day
        span = np.arange(start, cfg.n_days)
        if inj.kind == "ring":
            ring_id += 1
            buy_days = np.sort(inj_rng.choice(span, size=inj.shared_days,
                                              replace=False))
        else:
            buy_days = span
        rid = ring_id if inj.kind == "ring" else None
        for _m in range(inj.size):
            inv = ids[cursor]
            rng = np.random.default_rng(streams[1 + cursor])
            rec = _Recorder(inv, "H", cfg, rng, calendar)
            for t in buy_days:
                rec.trade(cfg.stock, int(t), "buy", inj.volume)
            # other-stock noise, damped inside the injection window so the
            # trading stays concentrated on the target
            style = _draw_style("H", cfg, rng)
            side_rate = np.full(cfg.n_days, style.side_rate)
            side_rate[start:] *= 1.0 - inj.concentration
            _noise_activity(rec, cfg, rng,
                            {s: side_rate for s in side_stocks}, day_bias,
                            style)
            records.extend(rec.records)
            planted.append(PlantedTrader(
                inv, inj.kind, rid, tuple(calendar[int(t)] for t in buy_days),
                "hard_discontinuous", True))
            cursor += 1

    panel = TransactionPanel(records, extra_calendar=calendar)
    pse = PseEvent(cfg.stock, "takeover_bid", calendar[-1], calendar[ref_idx],
                   cfg.offer_price, "buy")
    truth = GroundTruth(cfg.stock, pse.pse_date, tuple(planted))
    return panel, pse, truth


# -- ground-truth IO -----------------------------------------------------------------


def write_truth(truth: GroundTruth, path) -> Path:
    payload = {
        "stock": truth.stock,
        "pse_date": truth.pse_date.isoformat(),
        "planted": [{
            "investor": p.investor,
            "kind": p.kind,
            "ring": p.ring,
            "days": [d.isoformat() for d in p.days],
            "expected_category": p.expected_category,
            "expected_suspect": p.expected_suspect,
        } for p in truth.planted],
    }
    dump_json(payload, path)
    return Path(path)


def read_truth(path) -> GroundTruth:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    planted = tuple(PlantedTrader(
        p["investor"], p["kind"], p["ring"],
        tuple(date.fromisoformat(d) for d in p["days"]),
        p["expected_category"], p["expected_suspect"])
        for p in raw["planted"])
    return GroundTruth(raw["stock"], date.fromisoformat(raw["pse_date"]),
                       planted)


# -- scoring -----------------------------------------------------------------


@dataclass(frozen=True)
class PipelineScore:
    """Confusion summary of one detector against the planted truth."""

    pipeline: str
    n_planted: int
    n_detected: int
    n_hit: int
    precision: float | None         # None when nothing was detected
    recall: float | None            # None when nothing was planted
    recall_by_kind: dict[str, float | None] = field(default_factory=dict)
    false_positives: tuple[str, ...] = ()
    missed: tuple[str, ...] = ()


def _score_one(pipeline: str, detected: frozenset[str],
               truth: GroundTruth) -> PipelineScore:
    target = truth.investors()
    hits = detected & target
    by_kind: dict[str, float | None] = {}
    for kind in INJECTION_KINDS:
        members = set(truth.by_kind(kind))
        if members:
            by_kind[kind] = len(members & detected) / len(members)
    return PipelineScore(
        pipeline, len(target), len(detected), len(hits),
        len(hits) / len(detected) if detected else None,
        len(hits) / len(target) if target else None,
        by_kind,
        tuple(sorted(detected - target)),
        tuple(sorted(target - detected)))


def evaluate(detections: Mapping[str, Iterable[str]],
             truth: GroundTruth) -> dict[str, PipelineScore]:
    """Precision/recall per pipeline with a per-kind recall breakdown."""
    return {name: _score_one(name, frozenset(found), truth)
            for name, found in sorted(detections.items())}


# -- config IO -----------------------------------------------------------------


def config_to_dict(cfg: ScenarioConfig) -> dict:
    return {
        "stock": cfg.stock,
        "n_traders": cfg.n_traders,
        "n_days": cfg.n_days,
        "start": cfg.start.isoformat(),
        "type_mix": list(cfg.type_mix),
        "activity": list(cfg.activity),
        "buy_propensity": list(cfg.buy_propensity),
        "mixed_share": cfg.mixed_share,
        "volume": list(cfg.volume),
        "n_side_stocks": cfg.n_side_stocks,
        "side_activity": cfg.side_activity,
        "market_days": cfg.market_days,
        "delta_bar": cfg.delta_bar,
        "offer_price": cfg.offer_price,
        "price": cfg.price,
        "injections": [{
            "kind": inj.kind, "size": inj.size, "start_day": inj.start_day,
            "volume": list(inj.volume), "concentration": inj.concentration,
            "shared_days": inj.shared_days,
        } for inj in cfg.injections],
        "seed": cfg.seed,
    }


def config_from_dict(raw: Mapping) -> ScenarioConfig:
    known = dict(raw)
    injections = tuple(Injection(
        kind=inj["kind"], size=inj.get("size", 1),
        start_day=inj.get("start_day", 0),
        volume=tuple(inj.get("volume", (500.0, 2000.0))),
        concentration=inj.get("concentration", 1.0),
        shared_days=inj.get("shared_days", 15),
    ) for inj in known.pop("injections", []))
    kwargs = {}
    for name in ("stock", "n_traders", "n_days", "mixed_share",
                 "n_side_stocks", "side_activity", "market_days", "delta_bar",
                 "offer_price", "price", "seed"):
        if name in known:
            kwargs[name] = known.pop(name)
    if "start" in known:
        kwargs["start"] = date.fromisoformat(known.pop("start"))
    for name in ("type_mix", "activity", "buy_propensity", "volume"):
        if name in known:
            kwargs[name] = tuple(known.pop(name))
    if known:
        raise DataError(f"unknown scenario fields: {sorted(known)}")
    return ScenarioConfig(injections=injections, **kwargs)


def write_config(cfg: ScenarioConfig, path) -> Path:
    dump_json(config_to_dict(cfg), path)
    return Path(path)


def read_config(path) -> ScenarioConfig:
    return config_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
