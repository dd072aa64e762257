"""Run orchestration: manifests, artifact layout, replay determinism."""

import csv
import json
from datetime import date
from pathlib import Path

import numpy as np
import pytest

from tradewatch import community, discontinuity, features, kmeans
from tradewatch import market_data, rings, runs
from tradewatch import svn as svn_mod
from tradewatch.errors import DataError
from tradewatch.synth import Injection, ScenarioConfig
from tradewatch.util import file_sha256


# the 60-trader fixture is too small for a clean K elbow; the fallback is fine
pytestmark = pytest.mark.filterwarnings("ignore:no elbow")

SCENARIO = ScenarioConfig(
    n_traders=60, n_days=70, delta_bar=15, n_side_stocks=2,
    injections=(Injection("individual"),
                Injection("ring", size=4, shared_days=12)),
    seed=11)


@pytest.fixture(scope="module")
def home(tmp_path_factory):
    """One run home with the whole pipeline chain executed once."""
    root = tmp_path_factory.mktemp("runhome")
    runs.run_synth(SCENARIO, home=root, run_id="data")
    runs.run_kmeans(root / "data", home=root, run_id="km", window=10, step=5,
                    seed=3)
    runs.run_svn(root / "data", home=root, run_id="sv", correction="fdr",
                 seed=3)
    runs.run_bicm(root / "data", home=root, run_id="bi", seed=3)
    runs.run_full(root / "data", home=root, run_id="fu", window=10, step=5,
                  correction="fdr", seed=3)
    runs.run_compare(root / "sv", root / "bi", home=root, run_id="cmp")
    return root


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


# -- manifest & home resolution ---------------------------------------------------


def test_run_home_resolution(monkeypatch, tmp_path):
    monkeypatch.delenv(runs.RUN_HOME_ENV, raising=False)
    assert runs.run_home(tmp_path / "x") == tmp_path / "x"
    assert runs.run_home(None) == Path("runs")
    monkeypatch.setenv(runs.RUN_HOME_ENV, str(tmp_path / "y"))
    assert runs.run_home(None) == tmp_path / "y"
    assert runs.run_home(tmp_path / "x") == tmp_path / "x"


def test_manifest_shape(home):
    manifest = runs.read_manifest(home / "data")
    assert manifest["run_id"] == "data"
    assert manifest["pipeline"] == "synth"
    assert manifest["status"] == "complete"
    assert manifest["error"] is None
    assert manifest["created"] <= manifest["completed"]
    assert manifest["config"]["seed"] == SCENARIO.seed
    for logical in ("scenario", "panel", "panel_manifest", "pse", "truth"):
        assert (home / "data" / manifest["artifacts"][logical]).is_file()


def test_list_runs(home):
    ids = [m["run_id"] for m in runs.list_runs(home)]
    assert ids == sorted(ids)
    assert {"data", "km", "sv", "bi", "fu", "cmp"} <= set(ids)


def test_unknown_stock_fails_before_creating_a_run(home, tmp_path):
    with pytest.raises(DataError, match="no price-sensitive event"):
        runs.run_svn(home / "data", stock="NOPE", home=tmp_path, run_id="bad")
    assert not (tmp_path / "bad").exists()


def test_failed_run_leaves_failed_manifest(home, tmp_path):
    with pytest.raises(DataError, match="window length"):
        runs.run_kmeans(home / "data", window=500, home=tmp_path,
                        run_id="bad")
    manifest = runs.read_manifest(tmp_path / "bad")
    assert manifest["status"] == "failed"
    assert "window length" in manifest["error"]


def test_duplicate_run_id_rejected(home, tmp_path):
    runs.run_sweep(home / "data", home=tmp_path, run_id="dup")
    with pytest.raises(DataError, match="already exists"):
        runs.run_sweep(home / "data", home=tmp_path, run_id="dup")


def test_pick_event_rules(home):
    _panel, events = runs.load_run_inputs(home / "data")
    assert runs.pick_event(events, None) is events[0]
    assert runs.pick_event(events, SCENARIO.stock).stock == SCENARIO.stock
    with pytest.raises(DataError, match="no price-sensitive event"):
        runs.pick_event(events, "MISSING")
    with pytest.raises(DataError, match="pass --stock"):
        runs.pick_event(events + events, None)


def test_parse_correction():
    assert runs.parse_correction("bonferroni") == ("bonferroni", None)
    assert runs.parse_correction("fdr") == ("fdr", None)
    assert runs.parse_correction("fixed:1e-5") == ("fixed", 1e-5)
    with pytest.raises(DataError, match="bad fixed threshold"):
        runs.parse_correction("fixed:tiny")
    with pytest.raises(DataError, match="unknown correction"):
        runs.parse_correction("holm")


# -- synth & ingest data runs ---------------------------------------------------


def test_synth_run_round_trips_panel(home):
    manifest = runs.read_manifest(home / "data")
    panel = market_data.read_panel_snapshot(
        home / "data" / manifest["artifacts"]["panel"],
        home / "data" / manifest["artifacts"]["panel_manifest"])
    from tradewatch.synth import generate
    direct, pse, _truth = generate(SCENARIO)
    assert panel == direct
    events = runs.load_events(home / "data" / manifest["artifacts"]["pse"])
    assert events[0] == pse


def test_synth_run_deterministic(home, tmp_path):
    runs.run_synth(SCENARIO, home=tmp_path, run_id="again")
    for name in ("panel.csv", "truth.json", "pse.csv", "scenario.json"):
        assert file_sha256(tmp_path / "again" / name) \
            == file_sha256(home / "data" / name), name


def test_ingest_normalizes_to_same_snapshot(home, tmp_path):
    path = runs.run_ingest(home / "data" / "panel.csv",
                           home / "data" / "pse.csv",
                           home=tmp_path, run_id="ing")
    manifest = read_json(path)
    assert manifest["pipeline"] == "ingest"
    assert set(manifest["inputs"]) == {"transactions", "pse"}
    report = read_json(tmp_path / "ing" / "ingest_report.json")
    assert report["rows_dropped"] == 0 and report["diagnostics"] == []
    # canonical snapshot of a canonical snapshot is a fixed point, minus the
    # calendar days that only the synth manifest knew about
    direct = market_data.read_panel_snapshot(home / "data" / "panel.csv")
    redone = market_data.read_panel_snapshot(tmp_path / "ing" / "panel.csv")
    assert redone == direct


# -- kmeans pipeline artifacts ---------------------------------------------------


def test_kmeans_artifacts_match_library(home):
    suspects = read_json(home / "km" / "suspects.json")
    panel, events = runs.load_run_inputs(home / "data")
    pse = events[0]
    grid = features.make_windows(panel.calendar, 10, 5, panel.calendar[0],
                                 pse.pse_date)
    cube = features.rescale(features.build_cube(panel, pse.stock, grid))
    timeline = kmeans.dynamic_cluster(cube, suspects["k"], seed=3)
    rewarding = discontinuity.rewarding_cluster(
        timeline.final.clustering.centroids, pse.direction)
    by_cluster = discontinuity.classify_discontinuity(timeline, rewarding,
                                                      panel, pse.stock)
    report = discontinuity.rank_suspects(
        [lab for lab in by_cluster[rewarding]
         if lab.category != discontinuity.CONTINUOUS], cube, panel, pse)
    assert suspects["rewarding_cluster"] == rewarding
    assert suspects["stock"] == pse.stock
    assert suspects["offer_price"] == pse.offer_price
    assert [r["investor"] for r in suspects["rows"]] \
        == [e.investor for e in report.entries]
    assert [r["score"] for r in suspects["rows"]] \
        == [e.score for e in report.entries]

    chi2 = read_json(home / "km" / "chi2.json")
    comparison = discontinuity.compare_rewarding_vs_all(by_cluster, rewarding)
    assert chi2["all_rejected"] == comparison.all_rejected
    assert [t["p_value"] for t in chi2["tests"]] \
        == [t.p_value for t in comparison.tests]


def test_kmeans_cluster_counts_partition_investors(home):
    clusters = read_json(home / "km" / "kmeans_clusters.json")["clusters"]
    labels = {}
    with open(home / "km" / "timeline_labels.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            labels.setdefault(row["window_end"], []).append(row)
    final_end = max(labels)
    final_sizes = {}
    for row in labels[final_end]:
        final_sizes[int(row["label"])] = final_sizes.get(int(row["label"]), 0) + 1
    for entry in clusters:
        assert entry["n_members"] == final_sizes[entry["cluster"]]
        assert entry["n_continuous"] + entry["n_soft"] + entry["n_hard"] \
            == entry["n_members"]


# -- svn pipeline artifacts ---------------------------------------------------


def test_svn_nodes_roster_matches_restriction(home):
    nodes = read_json(home / "sv" / "nodes.json")
    panel, events = runs.load_run_inputs(home / "data")
    restricted = market_data.restrict_active(panel, events[0].stock, 8)
    states = svn_mod.assign_states(restricted.panel, events[0].stock, 0.01)
    assert tuple(nodes["investors"]) == states.investors
    assert nodes["n_days"] == states.n_days
    assert nodes["theta"] == 0.01
    assert nodes["retained_volume_share"] == restricted.retained_volume_share


def test_network_round_trip_through_csv(home):
    panel, events = runs.load_run_inputs(home / "data")
    restricted = market_data.restrict_active(panel, events[0].stock, 8)
    states = svn_mod.assign_states(restricted.panel, events[0].stock, 0.01)
    table = svn_mod.compute_pvalues(svn_mod.project_traders(states))
    direct = svn_mod.validate_edges(table, "fdr", 0.01)
    loaded = runs.load_network(home / "sv", "network_fdr")
    assert loaded.investors == direct.investors
    assert loaded.n_tests == direct.n_tests
    assert loaded.threshold == direct.threshold
    assert loaded.null_model == "hypergeometric"
    np.testing.assert_array_equal(loaded.i, direct.i)
    np.testing.assert_array_equal(loaded.j, direct.j)
    np.testing.assert_array_equal(loaded.types, direct.types)
    np.testing.assert_array_equal(loaded.weights, direct.weights)
    np.testing.assert_array_equal(loaded.pvalues, direct.pvalues)


def test_bonferroni_edges_subset_of_fdr(home):
    def pair_set(run, name):
        with open(runs.read_artifact(run, name), newline="") as fh:
            return {(r["investor_i"], r["investor_j"], r["type"])
                    for r in csv.DictReader(fh)}
    bonf = pair_set(home / "sv", "network_bonferroni")
    fdr = pair_set(home / "sv", "network_fdr")
    assert bonf <= fdr


def test_partition_json_round_trip(home):
    raw = read_json(home / "sv" / "partition.json")
    loaded = runs.load_partition(home / "sv" / "partition.json")
    net = runs.load_network(home / "sv", "network_fdr")
    direct = community.infomap_partition(svn_mod.diagonal_subnetwork(net),
                                         seed=3)
    assert loaded.codelength == direct.codelength
    assert loaded.sizes == direct.sizes
    assert loaded.assignment == direct.assignment
    assert raw["n_clusters"] == direct.n_clusters
    assert sum(raw["sizes"]) == len(loaded.nodes)


def test_ring_report_flags_planted_ring(home):
    report = read_json(home / "sv" / "ring_report.json")
    truth = read_json(home / "data" / "truth.json")
    ring_members = {p["investor"] for p in truth["planted"]
                    if p["kind"] == "ring"}
    flagged = [row for row in report["rows"] if row["suspect"]]
    assert flagged, "planted ring should produce at least one flagged cluster"
    best = flagged[0]
    assert best["r_c"] >= report["r_floor"] == 0.9
    assert ring_members <= set(best["members"])
    assert report["n_flagged_members"] == sum(r["n_members"] for r in flagged)


def test_raster_artifacts_cover_every_cluster(home):
    partition = read_json(home / "sv" / "partition.json")
    pse = runs.load_run_inputs(home / "data")[1][0]
    for cid in range(1, partition["n_clusters"] + 1):
        raster = read_json(home / "sv" / f"raster_c{cid}.json")
        assert raster["members"] == partition["clusters"][str(cid)]
        assert len(raster["grid"]) == len(raster["members"])
        assert {len(row) for row in raster["grid"]} == {len(raster["days"])}
        assert raster["markers"]["pse"] == pse.pse_date.isoformat()
        assert raster["markers"]["ref_start"] == pse.ref_start.isoformat()
        assert raster["chars"] == {"none": ".", "b": "B", "s": "S", "bs": "X"}


def test_delta_stats_payload_matches_library(home):
    payload = read_json(home / "sv" / "delta_stats.json")
    stats, offer_price = runs.load_delta_stats(home / "sv")
    panel, events = runs.load_run_inputs(home / "data")
    pse = events[0]
    assert offer_price == pse.offer_price
    roster = read_json(home / "sv" / "nodes.json")["investors"]
    direct = rings.delta_bar_stats(panel, pse.stock, roster,
                                   pse.reference_period)
    assert set(stats) == set(direct)
    for inv, s in direct.items():
        assert stats[inv] == s
    assert payload["ref_start"] == pse.ref_start.isoformat()


def test_sweep_artifact_counts_non_decreasing(home):
    for run in ("sv", "fu"):
        sweep = read_json(home / run / "sweep.json")
        thresholds = [p["threshold"] for p in sweep["points"]]
        edges = [p["n_edges"] for p in sweep["points"]]
        assert thresholds == sorted(thresholds)
        assert edges == sorted(edges)
        assert sweep["metric"] == "n_non_isolated"


def test_standalone_sweep_accepts_custom_grid(home, tmp_path):
    path = runs.run_sweep(home / "data", thresholds=[1e-6, 1e-3, 1e-1],
                          home=tmp_path, run_id="sw")
    sweep = read_json(tmp_path / "sw" / "sweep.json")
    assert [p["threshold"] for p in sweep["points"]] == [1e-6, 1e-3, 1e-1]


# -- bicm & compare runs ---------------------------------------------------


def test_bicm_run_agreement_artifact(home):
    agreement = read_json(home / "bi" / "bicm_agreement.json")
    svn_part = read_json(home / "bi" / "partition_svn.json")
    bicm_part = read_json(home / "bi" / "partition_bicm.json")
    assert agreement["row_clusters"] == [int(c) for c in
                                         sorted(svn_part["clusters"], key=int)]
    assert agreement["col_clusters"] == [int(c) for c in
                                         sorted(bicm_part["clusters"], key=int)]
    jac = np.array(agreement["jaccard"])
    assert jac.shape == (len(agreement["row_clusters"]),
                         len(agreement["col_clusters"]))
    assert ((0.0 <= jac) & (jac <= 1.0)).all()
    for a, b, s in agreement["matches"]:
        assert s == pytest.approx(jac[agreement["row_clusters"].index(a),
                                      agreement["col_clusters"].index(b)])
    bicm_net = runs.load_network(home / "bi", "network_bicm")
    assert bicm_net.null_model == "bicm"


def test_compare_run_uses_persisted_partitions(home):
    comparison = read_json(home / "cmp" / "comparison.json")
    assert comparison["rows_from"] == "sv"
    assert comparison["cols_from"] == "bi"
    agreement = read_json(home / "bi" / "bicm_agreement.json")
    # sv's partition is the same fdr partition the bicm run compared against
    assert comparison["jaccard"] == agreement["jaccard"]
    assert comparison["matches"] == agreement["matches"]


def test_compare_requires_partitions(home, tmp_path):
    with pytest.raises(DataError, match="no community partition"):
        runs.run_compare(home / "data", home / "sv", home=tmp_path)


# -- full pipeline ---------------------------------------------------


def test_full_run_superset_of_parts(home):
    full = runs.read_manifest(home / "fu")["artifacts"]
    for part in ("km", "sv", "bi"):
        for logical in runs.read_manifest(home / part)["artifacts"]:
            assert logical in full, f"{part}:{logical}"
    assert "containment" in full and "evaluation" in full


def test_containment_columns_sum_to_one(home):
    containment = read_json(home / "fu" / "containment.json")
    matrix = np.array(containment["matrix"])
    np.testing.assert_allclose(matrix.sum(axis=0), 1.0, atol=1e-12)
    assert containment["row_labels"][-1] == "unassigned"
    kmeans_clusters = read_json(home / "fu" / "kmeans_clusters.json")
    assert len(containment["col_labels"]) == kmeans_clusters["k"]


def test_full_run_evaluation_scores_planted_truth(home):
    evaluation = read_json(home / "fu" / "evaluation.json")
    truth = read_json(home / "data" / "truth.json")
    planted = {p["investor"] for p in truth["planted"]}
    assert set(evaluation) == {"kmeans", "svn"}
    for score in evaluation.values():
        assert score["n_planted"] == len(planted)
        assert score["n_hit"] <= score["n_detected"] or score["n_detected"] == 0
        assert sorted(score["missed"] + [
            p for p in planted
            if p not in score["missed"]]) == sorted(planted)
    svn_score = evaluation["svn"]
    ring_report = read_json(home / "fu" / "ring_report.json")
    detected = {m for row in ring_report["rows"] if row["suspect"]
                for m in row["members"]}
    assert svn_score["n_detected"] == len(detected)
    assert svn_score["n_hit"] == len(detected & planted)


def test_full_artifacts_equal_single_pipeline_runs(home):
    """The same knobs produce the same bytes whether run alone or in full."""
    km_arts = runs.read_manifest(home / "km")["artifacts"]
    for logical, fname in km_arts.items():
        assert (home / "km" / fname).read_bytes() \
            == (home / "fu" / fname).read_bytes(), logical
    sv_arts = runs.read_manifest(home / "sv")["artifacts"]
    for logical, fname in sv_arts.items():
        assert (home / "sv" / fname).read_bytes() \
            == (home / "fu" / fname).read_bytes(), logical
    bi_arts = runs.read_manifest(home / "bi")["artifacts"]
    for logical, fname in bi_arts.items():
        if logical == "nodes":
            continue  # written by the svn stage with identical content
        assert (home / "bi" / fname).read_bytes() \
            == (home / "fu" / fname).read_bytes(), logical


# -- replay ---------------------------------------------------


def test_replay_reproduces_artifacts_byte_identically(home, tmp_path):
    replayed = runs.replay_run(home / "fu", home=tmp_path, run_id="fu2")
    manifest = read_json(replayed)
    assert manifest["status"] == "complete"
    originals = sorted(p.name for p in (home / "fu").iterdir()
                       if p.name != runs.MANIFEST_NAME)
    copies = sorted(p.name for p in (tmp_path / "fu2").iterdir()
                    if p.name != runs.MANIFEST_NAME)
    assert originals == copies
    for name in originals:
        assert (home / "fu" / name).read_bytes() \
            == (tmp_path / "fu2" / name).read_bytes(), name


def test_replay_refuses_incomplete_run(home, tmp_path):
    with pytest.raises(DataError, match="window length"):
        runs.run_kmeans(home / "data", window=500, home=tmp_path,
                        run_id="broken")
    with pytest.raises(DataError, match="failed"):
        runs.replay_run(tmp_path / "broken", home=tmp_path)


def test_replay_synth_run(home, tmp_path):
    replayed = runs.replay_run(home / "data", home=tmp_path, run_id="d2")
    assert read_json(replayed)["pipeline"] == "synth"
    assert file_sha256(tmp_path / "d2" / "panel.csv") \
        == file_sha256(home / "data" / "panel.csv")
