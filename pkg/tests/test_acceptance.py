"""Release gate: one test per acceptance criterion, each with its own oracle.

Every criterion gets exactly one test whose pass/fail line (under ``pytest -v``)
is the verdict.  Numerical claims are checked against oracles that do not share
code with the implementation: exact rational arithmetic, literal subset or
outcome enumeration, and planted ground truth from the synthetic generator.
Wall-clock budgets are asserted inside each test; the heavy pipeline scenarios
are module-scoped fixtures so downstream criteria can inspect the same runs.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import math
import subprocess
import sys
import time
from collections import Counter
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from tradewatch import bicm, community, kmeans, market_data, runs, svn
from tradewatch.synth import Injection, ScenarioConfig, config_from_dict

DEMO_CONFIG = Path(__file__).resolve().parents[1] / "scripts" / "demo_scenario.json"

# Panel with twenty independent insiders who buy hard through the reference
# period: polarized one-sided background crowd, no block traders.
INSIDER_SCENARIO = ScenarioConfig(
    n_traders=2000, n_days=250, delta_bar=20,
    type_mix=(0.9, 0.1, 0.0), activity=(0.65, 0.75),
    buy_propensity=(0.05, 0.95), mixed_share=0.25,
    volume=(100.0, 140.0), side_activity=0.01,
    injections=tuple(Injection("individual") for _ in range(20)),
    seed=80,
)

# Panel with two coordinated rings of five over a sparse background.
RING_SCENARIO = ScenarioConfig(
    n_traders=2000, n_days=250, delta_bar=20,
    injections=(Injection("ring", size=5, shared_days=12),
                Injection("ring", size=5, shared_days=12)),
    seed=140,
)

# Desk-scale panel for the determinism and wall-clock budget check.
SCALE_SCENARIO = ScenarioConfig(
    n_traders=5000, n_days=540, delta_bar=20,
    injections=(Injection("ring", size=5, shared_days=12),
                Injection("ring", size=5, shared_days=12)),
    seed=170,
)


def read_json(run_dir: Path, name: str) -> dict:
    return json.loads((run_dir / name).read_text())


def planted_rings(data_run: Path) -> dict[int, set[str]]:
    groups: dict[int, set[str]] = {}
    for row in read_json(data_run, "truth.json")["planted"]:
        if row["kind"] == "ring":
            groups.setdefault(row["ring"], set()).add(row["investor"])
    return groups


def edge_triples(run_dir: Path, name: str) -> set[tuple[str, str, str]]:
    lines = (run_dir / name).read_text().strip().splitlines()
    return {tuple(line.split(",")[:3]) for line in lines[1:]}


def assert_budget(t0: float, budget_s: float, label: str) -> float:
    elapsed = time.perf_counter() - t0
    assert elapsed <= budget_s, f"{label}: {elapsed:.1f}s over {budget_s:.0f}s budget"
    print(f"{label}: {elapsed:.1f}s (budget {budget_s:.0f}s)")
    return elapsed


# -- shared pipeline scenarios --------------------------------------------------------


@pytest.fixture(scope="module")
def acc_home(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def insider_runs(acc_home):
    t0 = time.perf_counter()
    data = runs.run_synth(INSIDER_SCENARIO, home=acc_home, run_id="ins-data").parent
    km = runs.run_kmeans(data, home=acc_home, run_id="ins-km").parent
    return {"data": data, "km": km, "elapsed": time.perf_counter() - t0}


@pytest.fixture(scope="module")
def ring_runs(acc_home):
    t0 = time.perf_counter()
    data = runs.run_synth(RING_SCENARIO, home=acc_home, run_id="ring-data").parent
    sv = runs.run_svn(data, home=acc_home, run_id="ring-sv",
                      correction="bonferroni").parent
    background = dataclasses.replace(RING_SCENARIO, injections=())
    data0 = runs.run_synth(background, home=acc_home, run_id="bg-data").parent
    sv0 = runs.run_svn(data0, home=acc_home, run_id="bg-sv",
                       correction="bonferroni").parent
    return {"data": data, "sv": sv, "data0": data0, "sv0": sv0,
            "elapsed": time.perf_counter() - t0}


@pytest.fixture(scope="module")
def agreement_run(acc_home, ring_runs):
    t0 = time.perf_counter()
    bc = runs.run_bicm(ring_runs["data"], home=acc_home, run_id="ring-bc").parent
    return {"bc": bc, "elapsed": time.perf_counter() - t0}


@pytest.fixture(scope="module")
def scale_runs(acc_home):
    data = runs.run_synth(SCALE_SCENARIO, home=acc_home, run_id="scale-data").parent
    timings = {}
    out = {}
    for run_id, workers in (("scale-8a", 8), ("scale-8b", 8), ("scale-1", 1)):
        t0 = time.perf_counter()
        out[run_id] = runs.run_svn(data, home=acc_home, run_id=run_id,
                                   n_workers=workers).parent
        timings[run_id] = time.perf_counter() - t0
    return {"data": data, "runs": out, "timings": timings}


@pytest.fixture(scope="module")
def demo_runs(acc_home):
    """The demo scenario executed twice: through the CLI and the library."""
    t0 = time.perf_counter()
    cli_home = acc_home / "demo-cli"
    lib_home = acc_home / "demo-lib"
    cfg = config_from_dict(json.loads(DEMO_CONFIG.read_text()))

    def cli(*args: str) -> Path:
        proc = subprocess.run(
            [sys.executable, "-m", "tradewatch.cli", *args],
            capture_output=True, text=True, check=True)
        return Path(proc.stdout.strip().splitlines()[-1]).parent

    cli_data = cli("synth", "--config", str(DEMO_CONFIG), "--out", str(cli_home))
    cli_full = cli("full", "--run", str(cli_data), "--min-days", "4",
                   "--out", str(cli_home))
    lib_data = runs.run_synth(cfg, home=lib_home).parent
    lib_full = runs.run_full(lib_data, min_days=4, home=lib_home).parent
    return {"cli": (cli_data, cli_full), "lib": (lib_data, lib_full),
            "elapsed": time.perf_counter() - t0}


# -- closed-form and enumeration criteria ---------------------------------------------


def test_c01_bonferroni_threshold_matches_published_value():
    t0 = time.perf_counter()
    value = svn.bonferroni_threshold(4844, 0.01, 9)
    assert value == pytest.approx(9.47e-11, rel=1e-3), value
    print(f"bonferroni_threshold(4844, 0.01, 9) = {value:.6e}")
    assert_budget(t0, 1.0, "c01 published threshold")


def test_c02_hypergeom_pvalues_match_exhaustive_enumeration():
    t0 = time.perf_counter()
    worst = 0.0
    checked = 0

    # Tier 1, T <= 8: literal enumeration of every kj-subset of the day set.
    for t_days in range(1, 9):
        for ki in range(t_days + 1):
            fixed = set(range(ki))
            for kj in range(t_days + 1):
                hits = Counter(len(fixed.intersection(sub))
                               for sub in itertools.combinations(range(t_days), kj))
                total = math.comb(t_days, kj)
                for n in range(max(0, ki + kj - t_days), min(ki, kj) + 1):
                    exact = Fraction(sum(c for o, c in hits.items() if o >= n),
                                     total)
                    got = svn.hypergeom_pvalue(t_days, ki, kj, n)
                    worst = max(worst, abs(got - float(exact)))
                    checked += 1

    # Tier 2, T <= 30: exact integer tail counts over every margin pair.
    for t_days in range(1, 31):
        for ki in range(t_days + 1):
            for kj in range(t_days + 1):
                lo = max(0, ki + kj - t_days)
                hi = min(ki, kj)
                counts = [math.comb(ki, x) * math.comb(t_days - ki, kj - x)
                          for x in range(lo, hi + 1)]
                denom = math.comb(t_days, kj)
                tail = 0
                exact_by_n = {}
                for x in range(hi, lo - 1, -1):
                    tail += counts[x - lo]
                    exact_by_n[x] = Fraction(tail, denom)
                for n in range(lo, hi + 1):
                    got = svn.hypergeom_pvalue(t_days, ki, kj, n)
                    worst = max(worst, abs(got - float(exact_by_n[n])))
                    checked += 1

    assert worst <= 1e-12, worst
    print(f"hypergeometric: {checked} p-values, worst |err| = {worst:.2e}")
    assert_budget(t0, 60.0, "c02 hypergeometric exactness")


def outcome_enumeration_pmf(probs: np.ndarray) -> np.ndarray:
    """Exact pmf by enumerating all 2^T success/failure outcomes."""
    weight = np.array([1.0])
    successes = np.array([0])
    for p in probs:
        weight = np.concatenate([weight * (1.0 - p), weight * p])
        successes = np.concatenate([successes, successes + 1])
    return np.bincount(successes, weights=weight, minlength=probs.size + 1)


def dp_pmf(probs: np.ndarray) -> np.ndarray:
    tails = np.array([bicm.poisson_binomial_tail(probs, n)
                      for n in range(probs.size + 1)] + [0.0])
    return tails[:-1] - tails[1:]


def test_c03_poisson_binomial_dp_matches_enumeration_and_binomial():
    t0 = time.perf_counter()
    rng = np.random.default_rng(9103)
    worst = 0.0
    cases = [np.array([]), np.zeros(6), np.ones(6), np.array([0.0, 1.0, 0.5])]
    cases += [rng.random(int(rng.integers(1, 21))) for _ in range(60)]
    cases += [rng.random(20) for _ in range(5)]
    for probs in cases:
        diff = np.abs(dp_pmf(probs) - outcome_enumeration_pmf(probs))
        worst = max(worst, float(diff.max()) if diff.size else 0.0)
    assert worst <= 1e-12, worst

    worst_binom = 0.0
    for p in (0.5, 0.137, 0.9):
        frac = Fraction(p)
        for t_len in (1, 5, 12, 20):
            for n in range(t_len + 1):
                closed = sum(math.comb(t_len, j) * frac ** j
                             * (1 - frac) ** (t_len - j)
                             for j in range(n, t_len + 1))
                got = bicm.poisson_binomial_tail(np.full(t_len, p), n)
                worst_binom = max(worst_binom, abs(got - float(closed)))
    assert worst_binom <= 1e-12, worst_binom
    print(f"poisson-binomial: enum worst {worst:.2e}, "
          f"binomial worst {worst_binom:.2e}")
    assert_budget(t0, 60.0, "c03 poisson-binomial exactness")


def test_c04_bicm_fit_reaches_degrees_with_monotone_likelihood():
    t0 = time.perf_counter()
    rng = np.random.default_rng(9104)
    investors = tuple(f"I{r:02d}" for r in range(50))
    worst_residual = 0.0
    worst_dip = 0.0
    for trial in range(100):
        density = float(rng.uniform(0.05, 0.6))
        matrix = (rng.random((50, 100)) < density).astype(np.uint8)
        model = bicm.bicm_fit(bicm.Biadjacency("b", "STK", investors, 0.01,
                                               matrix))
        worst_residual = max(worst_residual, model.residual)
        assert model.residual <= 1e-6, (trial, model.residual)
        # Non-decreasing up to representation noise of the recorded value: a
        # ~1e3-magnitude log-likelihood has 4.5e-13 resolution in doubles, so
        # the pinned allowance is 4 ulps (any ascent bug would violate it by
        # many orders of magnitude).
        path = model.ll_path
        for a, b in zip(path, path[1:]):
            worst_dip = max(worst_dip, a - b)
            assert b >= a - 4.0 * np.spacing(abs(a)), (trial, a, b)
    print(f"bicm: 100 fits, worst degree residual {worst_residual:.2e}, "
          f"worst likelihood dip {worst_dip:.2e}")
    assert_budget(t0, 120.0, "c04 bicm fit")


def test_c05_kmeans_monotone_voronoi_and_three_blob_elbow():
    t0 = time.perf_counter()
    rng = np.random.default_rng(9105)
    for trial in range(1000):
        n = int(rng.integers(4, 40))
        d = int(rng.integers(1, 4))
        k = int(rng.integers(1, min(n, 6) + 1))
        pts = rng.normal(size=(n, d))
        fit = kmeans.kmeans_fit(pts, k, seed=int(rng.integers(2 ** 31)))
        losses = np.array(fit.batch_losses)
        assert np.all(np.diff(losses) <= 1e-9 * max(1.0, losses[0])), trial
        dist = ((pts[:, None, :] - fit.centroids[None, :, :]) ** 2).sum(axis=2)
        own = dist[np.arange(n), fit.labels - 1]
        assert np.all(own <= dist.min(axis=1) + 1e-9), trial

    hits = 0
    for seed in range(100):
        blob_rng = np.random.default_rng(seed)
        centers = blob_rng.choice([-0.8, 0.8], size=(3, 3))
        while min(np.linalg.norm(centers[i] - centers[j])
                  for i in range(3) for j in range(i + 1, 3)) < 1.5:
            centers = blob_rng.choice([-0.8, 0.8], size=(3, 3))
        pts = np.clip(np.concatenate(
            [c + blob_rng.normal(0, 0.05, size=(200, 3)) for c in centers]),
            -1, 1)
        if kmeans.elbow_select(pts, 10, 0.05, seed=seed) == 3:
            hits += 1
    assert hits >= 95, hits
    print(f"kmeans: 1000 monotone/Voronoi fits, elbow K=3 on {hits}/100 blobs")
    assert_budget(t0, 120.0, "c05 kmeans and elbow")


def test_c06_alignment_inverts_every_label_permutation_at_k7():
    t0 = time.perf_counter()
    labels = tuple(range(1, 8))
    prev = {lab: {f"T{lab}{m:02d}" for m in range(5 + lab)} for lab in labels}
    for sigma in itertools.permutations(labels):
        forward = dict(zip(labels, sigma))
        curr = {forward[lab]: set(prev[lab]) for lab in labels}
        result = kmeans.align_labels(prev, curr)
        assert result.mapping == {forward[lab]: lab for lab in labels}
        assert all(result.jaccard[lab] == 1.0 for lab in labels)
    print("alignment: all 5040 permutations inverted with per-label Jaccard 1")
    assert_budget(t0, 60.0, "c06 label alignment")


def normalized_mutual_information(a: dict[str, int], b: dict[str, int]) -> float:
    nodes = sorted(a)
    assert sorted(b) == nodes
    n = len(nodes)
    joint = Counter((a[v], b[v]) for v in nodes)
    left = Counter(a[v] for v in nodes)
    right = Counter(b[v] for v in nodes)
    info = sum(c / n * math.log(c * n / (left[i] * right[j]))
               for (i, j), c in joint.items())
    h_left = -sum(c / n * math.log(c / n) for c in left.values())
    h_right = -sum(c / n * math.log(c / n) for c in right.values())
    if h_left == 0.0 and h_right == 0.0:
        return 1.0
    return 2.0 * info / (h_left + h_right)


def test_c07_map_equation_recovers_planted_blocks_and_cliques():
    t0 = time.perf_counter()
    nmi_ok = 0
    code_ok = 0
    for seed in range(50):
        rng = np.random.default_rng(7000 + seed)
        names = [f"N{i:03d}" for i in range(100)]
        truth = {name: i // 25 for i, name in enumerate(names)}
        edges = [(names[i], names[j], 1.0)
                 for i in range(100) for j in range(i + 1, 100)
                 if rng.random() < (0.5 if truth[names[i]] == truth[names[j]]
                                    else 0.01)]
        part = community.infomap_partition(edges, seed=seed)
        restricted_truth = {v: truth[v] for v in part.nodes}
        nmi = normalized_mutual_information(part.assignment, restricted_truth)
        if nmi >= 0.9:
            nmi_ok += 1
        if part.codelength <= community.map_equation(edges, truth) * 1.01:
            code_ok += 1
    assert nmi_ok >= 45, nmi_ok
    assert code_ok >= 45, code_ok

    cliques = [[f"A{i}" for i in range(10)], [f"B{i}" for i in range(10)]]
    clique_edges = [(grp[i], grp[j], 1.0) for grp in cliques
                    for i in range(10) for j in range(i + 1, 10)]
    for seed in range(50):
        part = community.infomap_partition(clique_edges, seed=seed)
        found = sorted(sorted(part.members(c))
                       for c in range(1, part.n_clusters + 1))
        assert found == [sorted(g) for g in cliques], seed
    print(f"map equation: NMI>=0.9 on {nmi_ok}/50, codelength ok on "
          f"{code_ok}/50, cliques exact on 50/50")
    assert_budget(t0, 180.0, "c07 community recovery")


# -- planted-truth pipeline criteria ---------------------------------------------------


def test_c08_planted_insiders_land_hard_in_rewarding_cluster(insider_runs):
    truth = read_json(insider_runs["data"], "truth.json")
    planted = [row["investor"] for row in truth["planted"]]
    assert len(planted) == 20
    suspects = read_json(insider_runs["km"], "suspects.json")
    chi2 = read_json(insider_runs["km"], "chi2.json")
    category = {row["investor"]: row["category"] for row in suspects["rows"]}
    hard = [p for p in planted if category.get(p) == "hard_discontinuous"]
    assert len(hard) >= 18, sorted(category.get(p) for p in planted)
    assert chi2["all_rejected"] is True, chi2["tests"]
    worst_p = max(test["p_value"] for test in chi2["tests"])
    print(f"insiders: {len(hard)}/20 hard in rewarding cluster, "
          f"{len(chi2['tests'])} chi2 nulls rejected (worst p {worst_p:.1e})")
    assert insider_runs["elapsed"] <= 300.0, insider_runs["elapsed"]


def test_c09_planted_rings_flagged_with_clean_background(ring_runs):
    rings = planted_rings(ring_runs["data"])
    assert sorted(len(m) for m in rings.values()) == [5, 5]
    partition = read_json(ring_runs["sv"], "partition.json")
    report = read_json(ring_runs["sv"], "ring_report.json")
    flagged = {row["cluster"]: row for row in report["rows"]}
    for ring_id, members in sorted(rings.items()):
        hosts = {cid for cid, grp in partition["clusters"].items()
                 if members & set(grp)}
        assert len(hosts) == 1, (ring_id, hosts)
        host = hosts.pop()
        assert members <= set(partition["clusters"][host]), ring_id
        row = flagged[int(host)]
        assert row["r_c"] >= 0.9, row

    report0 = read_json(ring_runs["sv0"], "ring_report.json")
    n_flagged = report0["n_flagged_members"]
    assert n_flagged <= 0.01 * RING_SCENARIO.n_traders, n_flagged
    print(f"rings: both rings flagged whole (r_c >= 0.9); background run "
          f"flags {n_flagged} traders")
    assert ring_runs["elapsed"] <= 600.0, ring_runs["elapsed"]


def test_c10_bonferroni_edges_subset_of_fdr_with_monotone_sweeps(
        ring_runs, scale_runs, demo_runs, insider_runs):
    t0 = time.perf_counter()
    # Persisted networks from every svn-bearing acceptance run.
    svn_dirs = [ring_runs["sv"], ring_runs["sv0"],
                scale_runs["runs"]["scale-8a"], demo_runs["lib"][1]]
    for run_dir in svn_dirs:
        bonf = edge_triples(run_dir, "network_bonferroni_edges.csv")
        fdr = edge_triples(run_dir, "network_fdr_edges.csv")
        assert bonf <= fdr, run_dir
        sweep = read_json(run_dir, "sweep.json")
        counts = [point["n_edges"] for point in sweep["points"]]
        assert counts == sorted(counts), (run_dir, counts)

    # The dense insider panel exercises the same ordering at the library level.
    panel, events = runs.load_run_inputs(insider_runs["data"])
    pse = runs.pick_event(events, None)
    restricted = market_data.restrict_active(panel, pse.stock, 8)
    states = svn.assign_states(restricted.panel, pse.stock, 0.01)
    table = svn.compute_pvalues(svn.project_traders(states))
    nets = {name: svn.validate_edges(table, name, 0.01)
            for name in ("bonferroni", "fdr")}
    pairs = {name: set(zip(net.i.tolist(), net.j.tolist(),
                           net.types.tolist()))
             for name, net in nets.items()}
    assert pairs["bonferroni"] <= pairs["fdr"]
    grid = sorted(10.0 ** -e for e in range(2, 13))
    sweep = svn.threshold_sweep(table, grid, lambda net: len(net.non_isolated))
    counts = [point.n_edges for point in sweep.points]
    assert counts == sorted(counts), counts
    print(f"ordering: checked {len(svn_dirs)} persisted runs + dense panel "
          f"({len(pairs['bonferroni'])} vs {len(pairs['fdr'])} edges)")
    assert_budget(t0, 300.0, "c10 correction ordering")


def test_c11_bicm_and_svn_partitions_agree_on_rings(ring_runs, agreement_run):
    rings = planted_rings(ring_runs["data"])
    bc = agreement_run["bc"]
    part_svn = read_json(bc, "partition_svn.json")
    agreement = read_json(bc, "bicm_agreement.json")
    scores = {a: score for a, _b, score in agreement["matches"]}
    for ring_id, members in sorted(rings.items()):
        hosts = {int(cid) for cid, grp in part_svn["clusters"].items()
                 if members <= set(grp)}
        assert len(hosts) == 1, (ring_id, hosts)
        host = hosts.pop()
        assert scores.get(host, 0.0) >= 0.8, (ring_id, scores)
    print(f"agreement: ring clusters matched across methods with Jaccard "
          f"{sorted(scores.values(), reverse=True)[:2]}")
    assert agreement_run["elapsed"] <= 600.0, agreement_run["elapsed"]


def test_c12_scale_run_deterministic_and_within_budget(scale_runs):
    timings = scale_runs["timings"]
    assert timings["scale-8a"] <= 300.0, timings
    assert timings["scale-8b"] <= 300.0, timings

    def artifact_bytes(run_dir: Path) -> dict[str, bytes]:
        return {p.name: p.read_bytes() for p in sorted(run_dir.iterdir())
                if p.name != "manifest.json"}

    base = artifact_bytes(scale_runs["runs"]["scale-8a"])
    for other_id in ("scale-8b", "scale-1"):
        other = artifact_bytes(scale_runs["runs"][other_id])
        assert other.keys() == base.keys()
        mismatched = [name for name in base if base[name] != other[name]]
        assert not mismatched, (other_id, mismatched)
    print(f"scale: N=5000 T=540 svn in {timings['scale-8a']:.0f}s / "
          f"{timings['scale-8b']:.0f}s (8 workers), {timings['scale-1']:.0f}s "
          f"(1 worker); {len(base)} artifacts byte-identical")


def test_c13_cli_and_library_artifacts_byte_identical(demo_runs):
    for cli_dir, lib_dir in zip(demo_runs["cli"], demo_runs["lib"]):
        cli_files = {p.name: p.read_bytes() for p in sorted(cli_dir.iterdir())
                     if p.name != "manifest.json"}
        lib_files = {p.name: p.read_bytes() for p in sorted(lib_dir.iterdir())
                     if p.name != "manifest.json"}
        assert cli_files.keys() == lib_files.keys(), cli_dir
        mismatched = [n for n in cli_files if cli_files[n] != lib_files[n]]
        assert not mismatched, (cli_dir, mismatched)
    n_files = sum(1 for d in demo_runs["cli"]
                  for p in d.iterdir() if p.name != "manifest.json")
    print(f"cli/library: {n_files} demo artifacts byte-identical")
    assert demo_runs["elapsed"] <= 300.0, demo_runs["elapsed"]
