"""Run orchestration: run directories, manifests, and pipeline glue.

Every pipeline execution owns one directory under the run home (env
SURV_HOME, flag, or ./runs): artifacts plus a manifest.json recording the
parameter snapshot, input checksums, and artifact names.  Artifacts are pure
functions of (inputs, parameters, seed), so replaying a manifest reproduces
them byte for byte; the manifest itself carries the only timestamps.
"""

from __future__ import annotations

import csv
import json
import os
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import community, discontinuity, features, kmeans, market_data, rings
from . import bicm as bicm_mod
from . import svn as svn_mod
from .errors import DataError
from .synth import (ScenarioConfig, config_from_dict, config_to_dict,
                    evaluate, generate, read_truth, write_truth)
from .util import dump_json, file_sha256

RUN_HOME_ENV = "SURV_HOME"
MANIFEST_NAME = "manifest.json"
PIPELINES = ("ingest", "synth", "kmeans", "svn", "bicm", "sweep", "compare",
             "full")
_STATE_KEYS = {0: "none", svn_mod.STATE_B: "b", svn_mod.STATE_S: "s",
               svn_mod.STATE_BS: "bs"}


def run_home(explicit=None) -> Path:
    """Resolve the run root: explicit path, then $SURV_HOME, then ./runs."""
    if explicit is not None:
        return Path(explicit)
    env = os.environ.get(RUN_HOME_ENV)
    return Path(env) if env else Path("runs")


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def new_run_id(home: Path, pipeline: str) -> str:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
    base = f"{pipeline}-{stamp}"
    run_id, n = base, 1
    while (home / run_id).exists():
        run_id = f"{base}-{n}"
        n += 1
    return run_id


class RunContext:
    """One run directory with its manifest under construction."""

    def __init__(self, home, pipeline: str, config: dict,
                 inputs: dict[str, Path], run_id: str | None = None):
        if pipeline not in PIPELINES:
            raise ValueError(f"unknown pipeline {pipeline!r}")
        self.home = run_home(home)
        self.home.mkdir(parents=True, exist_ok=True)
        self.run_id = run_id or new_run_id(self.home, pipeline)
        self.path = self.home / self.run_id
        if self.path.exists():
            raise DataError(f"run directory {self.path} already exists")
        self.path.mkdir(parents=True)
        self.manifest = {
            "run_id": self.run_id,
            "pipeline": pipeline,
            "created": _utcnow(),
            "completed": None,
            "status": "running",
            "config": config,
            "inputs": {name: file_sha256(p) for name, p in sorted(inputs.items())},
            "artifacts": {},
            "error": None,
        }
        self._write()

    def _write(self) -> None:
        dump_json(self.manifest, self.path / MANIFEST_NAME)

    def artifact(self, logical: str, filename: str) -> Path:
        self.manifest["artifacts"][logical] = filename
        return self.path / filename

    def register(self, logical: str, path: Path) -> Path:
        self.manifest["artifacts"][logical] = Path(path).name
        return Path(path)

    def finish(self) -> Path:
        self.manifest["status"] = "complete"
        self.manifest["completed"] = _utcnow()
        self._write()
        return self.path / MANIFEST_NAME

    def fail(self, err: Exception) -> None:
        self.manifest["status"] = "failed"
        self.manifest["completed"] = _utcnow()
        self.manifest["error"] = f"{type(err).__name__}: {err}"
        self._write()


def read_manifest(run_dir) -> dict:
    path = Path(run_dir) / MANIFEST_NAME
    if not path.is_file():
        raise DataError(f"no manifest at {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def list_runs(home=None) -> list[dict]:
    root = run_home(home)
    out = []
    if root.is_dir():
        for child in sorted(root.iterdir()):
            if (child / MANIFEST_NAME).is_file():
                out.append(read_manifest(child))
    return out


# -- shared input plumbing ---------------------------------------------------------------


def _write_pse_csv(events, path: Path) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stock", "type", "pse_date", "ref_start", "ref_end",
                    "offer_price", "direction"])
        for e in events:
            w.writerow([e.stock, e.event_type, e.pse_date.isoformat(),
                        e.ref_start.isoformat(), e.pse_date.isoformat(),
                        repr(e.offer_price), e.direction])
    return path


def load_events(pse_csv) -> list[market_data.PseEvent]:
    registry = market_data.load_pse_registry(str(pse_csv))
    if registry.diagnostics:
        raise DataError(f"event registry problems: {registry.diagnostics}")
    return registry.events


def load_run_inputs(input_run) -> tuple[market_data.TransactionPanel, list]:
    """Panel and event registry persisted by a previous run."""
    input_run = Path(input_run)
    manifest = read_manifest(input_run)
    arts = manifest["artifacts"]
    for needed in ("panel", "panel_manifest", "pse"):
        if needed not in arts:
            raise DataError(f"run {manifest['run_id']} has no {needed!r} "
                            "artifact; point --run at a data run")
    panel = market_data.read_panel_snapshot(input_run / arts["panel"],
                                            input_run / arts["panel_manifest"])
    return panel, load_events(input_run / arts["pse"])


def pick_event(events, stock: str | None):
    if stock is not None:
        for e in events:
            if e.stock == stock:
                return e
        raise DataError(f"no price-sensitive event for stock {stock!r}")
    if len(events) == 1:
        return events[0]
    raise DataError(f"{len(events)} events on file; pass --stock to choose")


def _input_paths(input_run) -> dict[str, Path]:
    input_run = Path(input_run)
    arts = read_manifest(input_run)["artifacts"]
    return {name: input_run / fname for name, fname in sorted(arts.items())
            if name in ("panel", "panel_manifest", "pse", "truth")}


# -- artifact loaders (service, compare, replay) --------------------------------------------


def read_artifact(run_dir, logical: str) -> Path:
    manifest = read_manifest(run_dir)
    arts = manifest["artifacts"]
    if logical not in arts:
        raise DataError(f"run {manifest['run_id']} has no {logical!r} artifact")
    return Path(run_dir) / arts[logical]


def load_json_artifact(run_dir, logical: str):
    return json.loads(read_artifact(run_dir, logical).read_text(encoding="utf-8"))


def load_network(run_dir, name: str) -> svn_mod.ValidatedNetwork:
    """Rebuild a validated network from its CSV + manifest + node roster."""
    meta = load_json_artifact(run_dir, f"{name}_manifest")
    roster = load_json_artifact(run_dir, "nodes")["investors"]
    pos = {inv: k for k, inv in enumerate(roster)}
    i, j, types, weights, pvalues = [], [], [], [], []
    with open(read_artifact(run_dir, name), encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            i.append(pos[row["investor_i"]])
            j.append(pos[row["investor_j"]])
            types.append(svn_mod.LINK_TYPES.index(row["type"]))
            weights.append(int(row["weight"]))
            pvalues.append(float(row["p_value"]))
    return svn_mod.ValidatedNetwork(
        meta["stock"], tuple(roster), meta["n_days"], meta["theta"],
        meta["correction"], meta["alpha"], meta["threshold"], meta["n_tests"],
        np.array(i, dtype=np.int64), np.array(j, dtype=np.int64),
        np.array(types, dtype=np.int8), np.array(weights, dtype=np.int64),
        np.array(pvalues, dtype=float), null_model=meta["null_model"])


def load_partition(path) -> community.Partition:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    clusters = {int(cid): tuple(members)
                for cid, members in raw["clusters"].items()}
    assignment = {inv: cid for cid, members in clusters.items()
                  for inv in members}
    nodes = tuple(sorted(assignment))
    sizes = tuple(len(clusters[cid]) for cid in sorted(clusters))
    return community.Partition(nodes, assignment, sizes, raw["codelength"])


def load_delta_stats(run_dir) -> tuple[dict[str, rings.DeltaBarStats], float]:
    raw = load_json_artifact(run_dir, "delta_stats")
    stats = {inv: rings.DeltaBarStats(inv, *vals)
             for inv, vals in raw["stats"].items()}
    return stats, raw["offer_price"]


# -- data runs ---------------------------------------------------------------


def run_synth(cfg: ScenarioConfig, home=None, run_id: str | None = None) -> Path:
    """Generate a synthetic panel run: panel, event registry, ground truth."""
    ctx = RunContext(home, "synth", config_to_dict(cfg), {}, run_id)
    try:
        panel, pse, truth = generate(cfg)
        dump_json(config_to_dict(cfg), ctx.artifact("scenario", "scenario.json"))
        csv_path, man_path = market_data.write_panel_snapshot(panel, ctx.path)
        ctx.register("panel", csv_path)
        ctx.register("panel_manifest", man_path)
        _write_pse_csv([pse], ctx.artifact("pse", "pse.csv"))
        write_truth(truth, ctx.artifact("truth", "truth.json"))
    except Exception as err:
        ctx.fail(err)
        raise
    return ctx.finish()


def run_ingest(transactions_csv, pse_csv, *, error_budget: int = 0,
               home=None, run_id: str | None = None) -> Path:
    """Normalize external transaction + event CSVs into a data run."""
    inputs = {"transactions": Path(transactions_csv), "pse": Path(pse_csv)}
    config = {"transactions": str(transactions_csv), "pse": str(pse_csv),
              "error_budget": error_budget}
    ctx = RunContext(home, "ingest", config, inputs, run_id)
    try:
        parsed = market_data.parse_transactions(
            str(transactions_csv),
            market_data.ParseOptions(error_budget=error_budget))
        events = load_events(pse_csv)
        if not events:
            raise DataError("event registry is empty")
        csv_path, man_path = market_data.write_panel_snapshot(parsed.panel,
                                                              ctx.path)
        ctx.register("panel", csv_path)
        ctx.register("panel_manifest", man_path)
        _write_pse_csv(events, ctx.artifact("pse", "pse.csv"))
        dump_json({
            "rows_kept": parsed.report.rows_kept,
            "rows_dropped": parsed.report.rows_dropped,
            "diagnostics": parsed.report.diagnostics,
        }, ctx.artifact("ingest_report", "ingest_report.json"))
    except Exception as err:
        ctx.fail(err)
        raise
    return ctx.finish()


# -- dynamic-clustering pipeline ---------------------------------------------------------------


def _kmeans_products(panel, pse, *, window: int, step: int, k: int | None,
                     k_max: int, rel_tol: float, seed: int,
                     include_final: bool):
    grid = features.make_windows(panel.calendar, window, step,
                                 panel.calendar[0], pse.pse_date)
    cube = features.rescale(features.build_cube(panel, pse.stock, grid),
                            include_final=include_final)
    if k is None:
        window_ks = []
        for w in range(grid.m):
            _ids, pts = cube.active_points(w)
            if len(pts) >= k_max:
                window_ks.append(kmeans.elbow_select(pts, k_max, rel_tol,
                                                     seed=seed + w))
        if not window_ks:
            raise DataError(f"no window has at least {k_max} active investors")
        k = kmeans.select_global_k(window_ks)
    else:
        window_ks = [k]
    timeline = kmeans.dynamic_cluster(cube, k, seed=seed)
    rewarding = discontinuity.rewarding_cluster(
        timeline.final.clustering.centroids, pse.direction)
    by_cluster = discontinuity.classify_discontinuity(timeline, rewarding,
                                                      panel, pse.stock)
    comparison = discontinuity.compare_rewarding_vs_all(by_cluster, rewarding)
    suspects = [lab for lab in by_cluster[rewarding]
                if lab.category != discontinuity.CONTINUOUS]
    report = discontinuity.rank_suspects(suspects, cube, panel, pse)
    return grid, cube, window_ks, k, timeline, rewarding, by_cluster, \
        comparison, report


def _suspect_rows(report) -> list[dict]:
    return [{
        "rank": e.rank, "investor": e.investor, "type": e.investor_type,
        "category": e.category, "score": e.score,
        "shares_bought": e.shares_bought,
        "directionality": e.directionality,
        "expected_profit": e.expected_profit,
    } for e in report.entries]


def _write_kmeans_artifacts(ctx: RunContext, pse, products) -> None:
    (_grid, _cube, window_ks, k, timeline, rewarding, by_cluster, comparison,
     report) = products
    dump_json({"window_ks": window_ks, "k": k},
              ctx.artifact("elbow", "elbow.json"))
    json_path, labels_path = kmeans.write_timeline(timeline, ctx.path)
    ctx.register("timeline", json_path)
    ctx.register("timeline_labels", labels_path)
    discontinuity.write_suspect_csv(
        report, ctx.artifact("suspects_csv", "suspects.csv"))
    dump_json({
        "pipeline": "kmeans",
        "stock": pse.stock,
        "direction": pse.direction,
        "offer_price": pse.offer_price,
        "ref_start": report.ref_start.isoformat(),
        "ref_end": report.ref_end.isoformat(),
        "rewarding_cluster": rewarding,
        "k": k,
        "rows": _suspect_rows(report),
    }, ctx.artifact("suspects", "suspects.json"))
    dump_json({
        "rewarding": comparison.rewarding,
        "level": comparison.level,
        "all_rejected": comparison.all_rejected,
        "tests": [{
            "cluster": t.other,
            "counts_rewarding": list(t.counts_rewarding),
            "counts_other": list(t.counts_other),
            "statistic": t.statistic,
            "p_value": t.p_value,
            "rejected": t.rejected,
        } for t in comparison.tests],
    }, ctx.artifact("chi2", "chi2.json"))
    dump_json({
        "pipeline": "kmeans",
        "k": k,
        "rewarding": rewarding,
        "clusters": [{
            "cluster": cid,
            "n_members": len(labels),
            "n_continuous": sum(1 for la in labels
                                if la.category == discontinuity.CONTINUOUS),
            "n_soft": sum(1 for la in labels
                          if la.category == discontinuity.SOFT),
            "n_hard": sum(1 for la in labels
                          if la.category == discontinuity.HARD),
            "rewarding": cid == rewarding,
        } for cid, labels in sorted(by_cluster.items())],
    }, ctx.artifact("kmeans_clusters", "kmeans_clusters.json"))


def run_kmeans(input_run, *, stock: str | None = None, window: int = 20,
               step: int = 5, k: int | None = None, k_max: int = 10,
               rel_tol: float = 0.05, seed: int = 0,
               include_final: bool = True, pse_csv=None, home=None,
               run_id: str | None = None) -> Path:
    """Dynamic-clustering pipeline over a persisted data run."""
    panel, run_events = load_run_inputs(input_run)
    pse = pick_event(load_events(pse_csv) if pse_csv else run_events, stock)
    config = {"input_run": Path(input_run).name, "stock": pse.stock,
              "window": window, "step": step, "k": k, "k_max": k_max,
              "rel_tol": rel_tol, "seed": seed,
              "include_final": include_final,
              "pse_override": None if pse_csv is None else str(pse_csv)}
    ctx = RunContext(home, "kmeans", config, _input_paths(input_run), run_id)
    try:
        products = _kmeans_products(
            panel, pse, window=window, step=step, k=k, k_max=k_max,
            rel_tol=rel_tol, seed=seed, include_final=include_final)
        _write_kmeans_artifacts(ctx, pse, products)
    except Exception as err:
        ctx.fail(err)
        raise
    return ctx.finish()


# -- co-occurrence pipeline ---------------------------------------------------------------


def parse_correction(text: str) -> tuple[str, float | None]:
    """CLI correction syntax: bonferroni, fdr, or fixed:<threshold>."""
    if text in ("bonferroni", "fdr"):
        return text, None
    if text.startswith("fixed:"):
        try:
            return "fixed", float(text.split(":", 1)[1])
        except ValueError:
            raise DataError(f"bad fixed threshold in {text!r}") from None
    raise DataError(f"unknown correction {text!r}")


def _svn_table(panel, pse, *, theta: float, min_days: int, n_workers: int):
    restricted = market_data.restrict_active(panel, pse.stock, min_days)
    states = svn_mod.assign_states(restricted.panel, pse.stock, theta)
    table = svn_mod.compute_pvalues(svn_mod.project_traders(states),
                                    n_workers=n_workers)
    return restricted, states, table


def _partition_payload(partition: community.Partition, correction: str) -> dict:
    return {
        "correction": correction,
        "codelength": partition.codelength,
        "n_clusters": partition.n_clusters,
        "sizes": list(partition.sizes),
        "clusters": {str(cid): list(partition.members(cid))
                     for cid in range(1, partition.n_clusters + 1)},
    }


def _dossier_payload(d: rings.ClusterDossier) -> dict:
    return {
        "cluster": d.cluster,
        "members": list(d.members),
        "n_members": d.n_members,
        "n_active": d.n_active,
        "member_types": dict(sorted(d.member_types.items())),
        "r_c": d.r_c,
        "pi_c": d.pi_c,
        "pi_c_active": d.pi_c_active,
    }


def _write_raster_json(ctx, states, pse, cid, members) -> None:
    raster = rings.activity_raster(
        states, members,
        markers={"ref_start": pse.ref_start, "pse": pse.pse_date})
    dump_json({
        "cluster": cid,
        "members": list(raster.members),
        "days": [d.isoformat() for d in raster.days],
        "grid": list(raster.grid),
        "markers": {name: d.isoformat()
                    for name, d in sorted(raster.markers.items())},
        "chars": {_STATE_KEYS[code]: char
                  for code, char in rings.RASTER_CHARS.items()},
    }, ctx.artifact(f"raster_c{cid}", f"raster_c{cid}.json"))


def _sweep_grid(n_investors: int, table) -> list[float]:
    base = svn_mod.bonferroni_threshold(n_investors)
    grid = [base * 10.0 ** e for e in range(-2, 5)]
    n_tests = 9 * n_investors * (n_investors - 1) // 2
    fdr = svn_mod.fdr_threshold(table.pvalues, 0.01, n_tests)
    if fdr is not None:
        grid.append(fdr)
    return sorted({min(t, 1.0) for t in grid})


def _svn_products(panel, pse, *, theta, correction, alpha, threshold,
                  min_days, seed, n_workers):
    restricted, states, table = _svn_table(panel, pse, theta=theta,
                                           min_days=min_days,
                                           n_workers=n_workers)
    networks = {
        "bonferroni": svn_mod.validate_edges(table, "bonferroni", alpha),
        "fdr": svn_mod.validate_edges(table, "fdr", alpha),
    }
    if correction == "fixed":
        networks["fixed"] = svn_mod.validate_edges(table, "fixed",
                                                   threshold=threshold)
    chosen = networks[correction]
    diagonal = svn_mod.diagonal_subnetwork(chosen)
    partition = community.infomap_partition(diagonal, seed=seed)
    attributes = community.node_attributes(diagonal,
                                           restricted.panel.investor_types)
    enrichment = community.characterize_clusters(partition, attributes)
    stats = rings.delta_bar_stats(panel, pse.stock, states.investors,
                                  pse.reference_period)
    dossiers = rings.build_dossiers(partition, panel, pse.stock,
                                    pse.reference_period, pse.offer_price)
    report = rings.suspect_clusters(dossiers)
    sweep = svn_mod.threshold_sweep(
        table, _sweep_grid(len(table.investors), table),
        lambda net: len(net.non_isolated))
    return (restricted, states, table, networks, chosen, partition,
            enrichment, stats, dossiers, report, sweep)


def _write_svn_artifacts(ctx: RunContext, pse, products, correction) -> None:
    (restricted, states, _table, networks, _chosen, partition, enrichment,
     stats, dossiers, report, sweep) = products
    dump_json({
        "stock": pse.stock,
        "theta": states.theta,
        "n_days": states.n_days,
        "retained_volume_share": restricted.retained_volume_share,
        "investors": list(states.investors),
    }, ctx.artifact("nodes", "nodes.json"))
    for name, net in sorted(networks.items()):
        csv_path, man_path = svn_mod.write_network(net, ctx.path,
                                                   f"network_{name}")
        ctx.register(f"network_{name}", csv_path)
        ctx.register(f"network_{name}_manifest", man_path)

    dump_json(_partition_payload(partition, correction),
              ctx.artifact("partition", "partition.json"))
    community.write_partition(partition,
                              ctx.artifact("partition_csv", "partition.csv"))
    community.write_enrichment(enrichment,
                               ctx.artifact("enrichment_csv", "enrichment.csv"))
    flagged = {row.dossier.cluster for row in report.rows if row.suspect}
    enrich_rows = {row["cluster"]: row
                   for row in community.enrichment_summary(enrichment)}
    dump_json({
        "pipeline": "svn",
        "correction": correction,
        "n_clusters": partition.n_clusters,
        "codelength": partition.codelength,
        "clusters": [{
            **_dossier_payload(d),
            "suspect": d.cluster in flagged,
            "enrichment": {col: enrich_rows[d.cluster][col]
                           for col in ("OI", "UI", "OC", "UC")},
        } for d in dossiers],
    }, ctx.artifact("clusters", "clusters.json"))
    dump_json({
        "offer_price": pse.offer_price,
        "ref_start": pse.ref_start.isoformat(),
        "ref_end": pse.pse_date.isoformat(),
        "clusters": {str(d.cluster): _dossier_payload(d) for d in dossiers},
    }, ctx.artifact("dossiers", "dossiers.json"))
    rings.write_dossiers(report, ctx.artifact("dossiers_csv", "dossiers.csv"))
    dump_json({
        "pipeline": "svn",
        "r_floor": report.r_floor,
        "report_floor": report.report_floor,
        "n_flagged_clusters": report.n_flagged_clusters,
        "n_flagged_members": report.n_flagged_members,
        "n_flagged_active": report.n_flagged_active,
        "rows": [{
            **_dossier_payload(row.dossier),
            "suspect": row.suspect,
        } for row in report.rows],
    }, ctx.artifact("ring_report", "ring_report.json"))
    dump_json({
        "offer_price": pse.offer_price,
        "ref_start": pse.ref_start.isoformat(),
        "ref_end": pse.pse_date.isoformat(),
        "stats": {inv: [s.v_buy, s.v_sell, s.a_buy, s.a_sell]
                  for inv, s in sorted(stats.items())},
    }, ctx.artifact("delta_stats", "delta_stats.json"))
    dump_json({
        "metric": "n_non_isolated",
        "best_threshold": sweep.best_threshold,
        "points": [{"threshold": p.threshold, "n_edges": p.n_edges,
                    "metric": p.metric} for p in sweep.points],
    }, ctx.artifact("sweep", "sweep.json"))
    for cid in range(1, partition.n_clusters + 1):
        _write_raster_json(ctx, states, pse, cid, partition.members(cid))


def run_svn(input_run, *, stock: str | None = None, theta: float = 0.01,
            correction: str = "bonferroni", alpha: float = 0.01,
            threshold: float | None = None, min_days: int = 8, seed: int = 0,
            n_workers: int = 1, pse_csv=None, home=None,
            run_id: str | None = None) -> Path:
    """Co-occurrence validation + communities over a persisted data run."""
    panel, run_events = load_run_inputs(input_run)
    pse = pick_event(load_events(pse_csv) if pse_csv else run_events, stock)
    config = {"input_run": Path(input_run).name, "stock": pse.stock,
              "theta": theta, "correction": correction, "alpha": alpha,
              "threshold": threshold, "min_days": min_days, "seed": seed,
              "n_workers": n_workers,
              "pse_override": None if pse_csv is None else str(pse_csv)}
    ctx = RunContext(home, "svn", config, _input_paths(input_run), run_id)
    try:
        products = _svn_products(panel, pse, theta=theta,
                                 correction=correction, alpha=alpha,
                                 threshold=threshold, min_days=min_days,
                                 seed=seed, n_workers=n_workers)
        _write_svn_artifacts(ctx, pse, products, correction)
    except Exception as err:
        ctx.fail(err)
        raise
    return ctx.finish()


def run_sweep(input_run, *, stock: str | None = None, theta: float = 0.01,
              min_days: int = 8, thresholds=None, n_workers: int = 1,
              pse_csv=None, home=None, run_id: str | None = None) -> Path:
    """Fixed-threshold sweep of the validation cut on one data run."""
    panel, run_events = load_run_inputs(input_run)
    pse = pick_event(load_events(pse_csv) if pse_csv else run_events, stock)
    config = {"input_run": Path(input_run).name, "stock": pse.stock,
              "theta": theta, "min_days": min_days,
              "thresholds": None if thresholds is None
              else [float(t) for t in thresholds],
              "pse_override": None if pse_csv is None else str(pse_csv)}
    ctx = RunContext(home, "sweep", config, _input_paths(input_run), run_id)
    try:
        _restricted, _states, table = _svn_table(panel, pse, theta=theta,
                                                 min_days=min_days,
                                                 n_workers=n_workers)
        grid = (list(thresholds) if thresholds is not None
                else _sweep_grid(len(table.investors), table))
        sweep = svn_mod.threshold_sweep(table, grid,
                                        lambda net: len(net.non_isolated))
        dump_json({
            "metric": "n_non_isolated",
            "best_threshold": sweep.best_threshold,
            "points": [{"threshold": p.threshold, "n_edges": p.n_edges,
                        "metric": p.metric} for p in sweep.points],
        }, ctx.artifact("sweep", "sweep.json"))
    except Exception as err:
        ctx.fail(err)
        raise
    return ctx.finish()


# -- configuration-model pipeline ---------------------------------------------------------------


def _agreement_payload(cmp: bicm_mod.PartitionComparison, rows_from: str,
                       cols_from: str) -> dict:
    return {
        "rows_from": rows_from,
        "cols_from": cols_from,
        "row_clusters": list(cmp.row_clusters),
        "col_clusters": list(cmp.col_clusters),
        "jaccard": [[float(v) for v in row] for row in cmp.jaccard],
        "matches": [[a, b, s] for a, b, s in cmp.matches],
        "floor": cmp.floor,
        "n_above_floor": cmp.n_above_floor,
    }


def _bicm_products(states, table, *, alpha, seed, floor):
    svn_net = svn_mod.validate_edges(table, "fdr", alpha)
    svn_part = community.infomap_partition(svn_mod.diagonal_subnetwork(svn_net),
                                           seed=seed)
    layers = bicm_mod.split_tripartite(states)
    models = {q: bicm_mod.bicm_fit(bi) for q, bi in layers.items()}
    bicm_net = bicm_mod.vmotif_validate(layers, models, correction="fdr",
                                        alpha=alpha)
    bicm_part = community.infomap_partition(bicm_net, seed=seed)
    agreement = bicm_mod.compare_partitions(svn_part, bicm_part, floor=floor)
    return svn_net, svn_part, bicm_net, bicm_part, agreement


def _write_bicm_artifacts(ctx: RunContext, products) -> None:
    svn_net, svn_part, bicm_net, bicm_part, agreement = products
    for name, net in (("svn_fdr", svn_net), ("bicm", bicm_net)):
        csv_path, man_path = svn_mod.write_network(net, ctx.path,
                                                   f"network_{name}")
        ctx.register(f"network_{name}", csv_path)
        ctx.register(f"network_{name}_manifest", man_path)
    dump_json(_partition_payload(svn_part, "fdr"),
              ctx.artifact("partition_svn", "partition_svn.json"))
    dump_json(_partition_payload(bicm_part, "fdr"),
              ctx.artifact("partition_bicm", "partition_bicm.json"))
    dump_json(_agreement_payload(agreement, "svn", "bicm"),
              ctx.artifact("bicm_agreement", "bicm_agreement.json"))


def run_bicm(input_run, *, stock: str | None = None, theta: float = 0.01,
             alpha: float = 0.01, min_days: int = 8, seed: int = 0,
             floor: float = 0.8, n_workers: int = 1, pse_csv=None, home=None,
             run_id: str | None = None) -> Path:
    """Configuration-model validation compared against the hypergeometric one."""
    panel, run_events = load_run_inputs(input_run)
    pse = pick_event(load_events(pse_csv) if pse_csv else run_events, stock)
    config = {"input_run": Path(input_run).name, "stock": pse.stock,
              "theta": theta, "alpha": alpha, "min_days": min_days,
              "seed": seed, "floor": floor,
              "pse_override": None if pse_csv is None else str(pse_csv)}
    ctx = RunContext(home, "bicm", config, _input_paths(input_run), run_id)
    try:
        restricted, states, table = _svn_table(panel, pse, theta=theta,
                                               min_days=min_days,
                                               n_workers=n_workers)
        dump_json({
            "stock": pse.stock,
            "theta": states.theta,
            "n_days": states.n_days,
            "retained_volume_share": restricted.retained_volume_share,
            "investors": list(states.investors),
        }, ctx.artifact("nodes", "nodes.json"))
        _write_bicm_artifacts(ctx, _bicm_products(states, table, alpha=alpha,
                                                  seed=seed, floor=floor))
    except Exception as err:
        ctx.fail(err)
        raise
    return ctx.finish()


def _partition_artifact(run_dir) -> Path:
    arts = read_manifest(run_dir)["artifacts"]
    for logical in ("partition", "partition_bicm"):
        if logical in arts:
            return Path(run_dir) / arts[logical]
    raise DataError(f"run {Path(run_dir).name} has no community partition")


def run_compare(run_a, run_b, *, floor: float = 0.8, home=None,
                run_id: str | None = None) -> Path:
    """Jaccard-match the community partitions of two completed runs."""
    path_a = _partition_artifact(run_a)
    path_b = _partition_artifact(run_b)
    config = {"run_a": Path(run_a).name, "run_b": Path(run_b).name,
              "floor": floor}
    ctx = RunContext(home, "compare", config,
                     {"partition_a": path_a, "partition_b": path_b}, run_id)
    try:
        cmp = bicm_mod.compare_partitions(load_partition(path_a),
                                          load_partition(path_b), floor=floor)
        dump_json(_agreement_payload(cmp, Path(run_a).name, Path(run_b).name),
                  ctx.artifact("comparison", "comparison.json"))
    except Exception as err:
        ctx.fail(err)
        raise
    return ctx.finish()


# -- full pipeline ---------------------------------------------------------------


def _containment_payload(matrix: rings.ContainmentMatrix, rows_from: str,
                         cols_from: str) -> dict:
    return {
        "rows_from": rows_from,
        "cols_from": cols_from,
        "row_labels": list(matrix.row_labels),
        "col_labels": list(matrix.col_labels),
        "matrix": [[float(v) for v in row] for row in matrix.matrix],
    }


def _kmeans_final_partition(timeline) -> community.Partition:
    members = timeline.final.members()
    assignment = {inv: cid for cid, invs in members.items() for inv in invs}
    nodes = tuple(sorted(assignment))
    sizes = tuple(len(members[cid]) for cid in sorted(members))
    return community.Partition(nodes, assignment, sizes, 0.0)


def run_full(input_run, *, stock: str | None = None, window: int = 20,
             step: int = 5, k: int | None = None, k_max: int = 10,
             rel_tol: float = 0.05, theta: float = 0.01,
             correction: str = "bonferroni", alpha: float = 0.01,
             threshold: float | None = None, min_days: int = 8,
             seed: int = 0, include_final: bool = True, floor: float = 0.8,
             n_workers: int = 1, pse_csv=None, home=None,
             run_id: str | None = None) -> Path:
    """All three pipelines plus cross-method containment and truth scoring."""
    panel, run_events = load_run_inputs(input_run)
    pse = pick_event(load_events(pse_csv) if pse_csv else run_events, stock)
    config = {"input_run": Path(input_run).name, "stock": pse.stock,
              "window": window, "step": step, "k": k, "k_max": k_max,
              "rel_tol": rel_tol, "theta": theta, "correction": correction,
              "alpha": alpha, "threshold": threshold, "min_days": min_days,
              "seed": seed, "include_final": include_final, "floor": floor,
              "n_workers": n_workers,
              "pse_override": None if pse_csv is None else str(pse_csv)}
    ctx = RunContext(home, "full", config, _input_paths(input_run), run_id)
    try:
        km = _kmeans_products(panel, pse, window=window, step=step, k=k,
                              k_max=k_max, rel_tol=rel_tol, seed=seed,
                              include_final=include_final)
        _write_kmeans_artifacts(ctx, pse, km)
        timeline, rewarding, by_cluster = km[4], km[5], km[6]

        sv = _svn_products(panel, pse, theta=theta, correction=correction,
                           alpha=alpha, threshold=threshold,
                           min_days=min_days, seed=seed, n_workers=n_workers)
        _write_svn_artifacts(ctx, pse, sv, correction)
        states, table, partition, report = sv[1], sv[2], sv[5], sv[9]

        _write_bicm_artifacts(ctx, _bicm_products(states, table, alpha=alpha,
                                                  seed=seed, floor=floor))

        containment = rings.containment_matrix(
            partition, _kmeans_final_partition(timeline))
        dump_json(_containment_payload(containment, "svn-communities",
                                       "kmeans-final-window"),
                  ctx.artifact("containment", "containment.json"))

        manifest = read_manifest(input_run)
        if "truth" in manifest["artifacts"]:
            truth = read_truth(Path(input_run) / manifest["artifacts"]["truth"])
            km_detected = [lab.investor for lab in by_cluster[rewarding]
                           if lab.category != discontinuity.CONTINUOUS]
            svn_detected = [m for row in report.rows if row.suspect
                            for m in row.dossier.members]
            scores = evaluate({"kmeans": km_detected, "svn": svn_detected},
                              truth)
            dump_json({name: {
                "n_planted": s.n_planted,
                "n_detected": s.n_detected,
                "n_hit": s.n_hit,
                "precision": s.precision,
                "recall": s.recall,
                "recall_by_kind": s.recall_by_kind,
                "false_positives": list(s.false_positives),
                "missed": list(s.missed),
            } for name, s in scores.items()},
                ctx.artifact("evaluation", "evaluation.json"))
    except Exception as err:
        ctx.fail(err)
        raise
    return ctx.finish()


# -- replay ---------------------------------------------------------------


def replay_run(run_dir, home=None, run_id: str | None = None) -> Path:
    """Re-execute a completed run from its manifest into a fresh directory.

    Artifacts come out byte-identical to the original's; only manifest.json
    (timestamps, run id) differs.
    """
    manifest = read_manifest(run_dir)
    if manifest["status"] != "complete":
        raise DataError(f"run {manifest['run_id']} is {manifest['status']}, "
                        "not complete")
    pipeline = manifest["pipeline"]
    cfg = dict(manifest["config"])
    base = Path(run_dir).parent

    if pipeline == "synth":
        return run_synth(config_from_dict(cfg), home=home, run_id=run_id)
    if pipeline == "ingest":
        return run_ingest(cfg["transactions"], cfg["pse"],
                          error_budget=cfg["error_budget"], home=home,
                          run_id=run_id)
    if pipeline == "compare":
        return run_compare(base / cfg["run_a"], base / cfg["run_b"],
                           floor=cfg["floor"], home=home, run_id=run_id)
    input_run = base / cfg.pop("input_run")
    cfg["pse_csv"] = cfg.pop("pse_override", None)
    runner = {"kmeans": run_kmeans, "svn": run_svn, "bicm": run_bicm,
              "sweep": run_sweep, "full": run_full}[pipeline]
    return runner(input_run, home=home, run_id=run_id, **cfg)
