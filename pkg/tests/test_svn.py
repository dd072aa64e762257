"""Trading states, 9-type co-occurrence projection, hypergeometric validation."""

import csv
import itertools
import json
import math
from datetime import date, timedelta
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats as sps

from tradewatch.market_data import TransactionPanel, TransactionRecord
from tradewatch.svn import (
    LINK_TYPES,
    STATE_B,
    STATE_BS,
    STATE_INACTIVE,
    STATE_S,
    StateMatrix,
    assign_states,
    bonferroni_threshold,
    compute_pvalues,
    diagonal_subnetwork,
    directionality,
    fdr_threshold,
    hypergeom_pvalue,
    hypergeom_pvalues,
    project_traders,
    threshold_sweep,
    validate_edges,
    write_network,
)


def weekdays(start: date, n: int) -> list[date]:
    out, d = [], start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += timedelta(days=1)
    return out


def states_from_codes(codes, stock="XYZ", theta=0.01):
    codes = np.asarray(codes, dtype=np.int8)
    n, t = codes.shape
    investors = tuple(f"i{k:03d}" for k in range(n))
    days = tuple(weekdays(date(2020, 1, 2), t))
    return StateMatrix(stock, investors, days, codes, theta)


def hyper_sf_oracle(t, ki, kj, n):
    """Exact rational upper tail of the hypergeometric distribution."""
    total = math.comb(t, kj)
    acc = sum(Fraction(math.comb(ki, x) * math.comb(t - ki, kj - x), total)
              for x in range(n, min(ki, kj) + 1))
    return float(acc)


# -- directionality and states ---------------------------------------------------------------


def test_directionality_basics():
    assert directionality(100, 0) == 1.0
    assert directionality(50, 50) == 0.0
    assert directionality(3, 1) == 0.5
    assert directionality(0, 80) == -1.0


def test_directionality_undefined_when_inactive():
    with pytest.raises(ValueError):
        directionality(0, 0)


def test_assign_states_thresholds():
    cal = weekdays(date(2020, 1, 2), 4)
    recs = [
        TransactionRecord("a", "H", "MTA", "XYZ", cal[0], 3, 1, 30, 10),    # r=0.5 -> b
        TransactionRecord("a", "H", "MTA", "XYZ", cal[1], 995, 1005, 9950, 10050),  # r=-0.005 -> bs
        TransactionRecord("a", "H", "MTA", "XYZ", cal[2], 1, 99, 10, 990),  # r=-0.98 -> s
    ]
    sm = assign_states(TransactionPanel(recs, extra_calendar=cal), "XYZ")
    assert sm.codes[0, 0] == STATE_B
    assert sm.codes[0, 1] == STATE_BS
    assert sm.codes[0, 2] == STATE_S
    assert sm.codes[0, 3] == STATE_INACTIVE


def test_assign_states_rejects_bad_theta():
    cal = weekdays(date(2020, 1, 2), 2)
    panel = TransactionPanel(
        [TransactionRecord("a", "H", "MTA", "XYZ", cal[0], 1, 0, 10, 0)],
        extra_calendar=cal)
    with pytest.raises(ValueError):
        assign_states(panel, "XYZ", theta=0.0)
    with pytest.raises(ValueError):
        assign_states(panel, "XYZ", theta=1.0)


def test_assign_states_matches_per_day_oracle():
    rng = np.random.default_rng(11)
    cal = weekdays(date(2020, 1, 2), 15)
    recs = []
    for k in range(12):
        for t in range(15):
            if rng.random() < 0.4:
                continue
            vb = float(rng.integers(0, 50))
            vs = float(rng.integers(0, 50))
            recs.append(TransactionRecord(f"i{k:02d}", "H", "MTA", "XYZ", cal[t],
                                          vb, vs, vb * 10, vs * 10))
    panel = TransactionPanel(recs, extra_calendar=cal)
    sm = assign_states(panel, "XYZ", theta=0.01)

    mats = panel.stock_matrices("XYZ", sm.investors)
    for i in range(len(sm.investors)):
        for t in range(15):
            vb = mats["buy_volume"][i, t]
            vs = mats["sell_volume"][i, t]
            if vb + vs == 0:
                expect = STATE_INACTIVE
            else:
                r = (vb - vs) / (vb + vs)
                expect = STATE_B if r > 0.01 else STATE_S if r < -0.01 else STATE_BS
            assert sm.codes[i, t] == expect


def test_state_margins_partition_active_days():
    rng = np.random.default_rng(3)
    codes = rng.integers(0, 4, size=(20, 30)).astype(np.int8)
    sm = states_from_codes(codes)
    active = (codes != STATE_INACTIVE).sum(axis=1)
    assert np.array_equal(sm.margins.sum(axis=1), active)
    assert np.array_equal(sm.margins[:, 0], (codes == STATE_B).sum(axis=1))


# -- projection ---------------------------------------------------------------


def brute_force_edges(codes):
    """Exhaustive pair/day enumeration of the 9-type weighted multigraph."""
    name = {STATE_B: "b", STATE_S: "s", STATE_BS: "bs"}
    n = codes.shape[0]
    out = {}
    for i, j in itertools.combinations(range(n), 2):
        for t in range(codes.shape[1]):
            qi, qj = codes[i, t], codes[j, t]
            if qi == STATE_INACTIVE or qj == STATE_INACTIVE:
                continue
            key = (i, j, name[qi] + name[qj])
            out[key] = out.get(key, 0) + 1
    return out


def test_project_bb_weight():
    codes = np.zeros((2, 8), dtype=np.int8)
    codes[0, :5] = STATE_B
    codes[1, :5] = STATE_B
    graph = project_traders(states_from_codes(codes))
    table = compute_pvalues(graph)
    assert len(table.weights) == 1
    assert table.types[0] == LINK_TYPES.index("bb")
    assert table.weights[0] == 5


def test_project_no_shared_days_no_edge():
    codes = np.zeros((2, 8), dtype=np.int8)
    codes[0, :4] = STATE_B
    codes[1, 4:] = STATE_S
    graph = project_traders(states_from_codes(codes))
    assert compute_pvalues(graph).weights.size == 0


def test_project_matches_exhaustive_enumeration():
    rng = np.random.default_rng(7)
    codes = rng.choice([0, 1, 2, 3], size=(4, 12), p=[0.3, 0.3, 0.25, 0.15])
    codes = codes.astype(np.int8)
    graph = project_traders(states_from_codes(codes))
    table = compute_pvalues(graph)
    got = {(int(table.i[e]), int(table.j[e]), LINK_TYPES[table.types[e]]):
           int(table.weights[e]) for e in range(table.weights.size)}
    assert got == brute_force_edges(codes)


def test_project_type_weights_sum_to_coactive_days():
    rng = np.random.default_rng(19)
    codes = rng.integers(0, 4, size=(8, 25)).astype(np.int8)
    graph = project_traders(states_from_codes(codes))
    table = compute_pvalues(graph)
    active = codes != STATE_INACTIVE
    for i, j in itertools.combinations(range(8), 2):
        coactive = int((active[i] & active[j]).sum())
        mask = (table.i == i) & (table.j == j)
        assert int(table.weights[mask].sum()) == coactive


def test_project_weight_bounded_by_margins():
    rng = np.random.default_rng(23)
    codes = rng.integers(0, 4, size=(6, 20)).astype(np.int8)
    sm = states_from_codes(codes)
    table = compute_pvalues(project_traders(sm))
    q_of = {0: 0, 1: 1, 2: 2}   # b, s, bs margin columns
    for e in range(table.weights.size):
        ty = LINK_TYPES[table.types[e]]
        qi, qj = {"bb": (0, 0), "ss": (1, 1), "bsbs": (2, 2), "bs": (0, 1),
                  "sb": (1, 0), "bbs": (0, 2), "bsb": (2, 0), "sbs": (1, 2),
                  "bss": (2, 1)}[ty]
        ki = sm.margins[table.i[e], qi]
        kj = sm.margins[table.j[e], qj]
        assert table.weights[e] <= min(ki, kj)


# -- hypergeometric p-values ---------------------------------------------------------------


def test_pvalue_zero_overlap_is_one():
    assert hypergeom_pvalue(10, 5, 4, 0) == 1.0


def test_pvalue_small_case_exact_fraction():
    # P(X >= 4) with X ~ HG(T=10, K=5, n=4): C(5,4)C(5,0)/C(10,4) = 5/210
    p = hypergeom_pvalue(10, 5, 4, 4)
    assert p == pytest.approx(5 / 210, rel=1e-14)


def test_pvalue_forced_overlap_margin():
    assert hypergeom_pvalue(12, 12, 7, 7) == 1.0


def test_pvalue_matches_exact_enumeration_small_T():
    rng = np.random.default_rng(31)
    for _ in range(250):
        t = int(rng.integers(1, 31))
        ki = int(rng.integers(0, t + 1))
        kj = int(rng.integers(0, t + 1))
        n_max = min(ki, kj)
        n = int(rng.integers(0, n_max + 1))
        got = hypergeom_pvalue(t, ki, kj, n)
        want = hyper_sf_oracle(t, ki, kj, n)
        assert abs(got - want) < 1e-12, (t, ki, kj, n)


def test_pvalue_matches_scipy_at_scale():
    rng = np.random.default_rng(37)
    for _ in range(100):
        t = int(rng.integers(100, 600))
        ki = int(rng.integers(1, t))
        kj = int(rng.integers(1, t))
        n = int(rng.integers(0, min(ki, kj) + 1))
        got = hypergeom_pvalue(t, ki, kj, n)
        want = float(sps.hypergeom.sf(n - 1, t, ki, kj))
        assert got == pytest.approx(want, rel=1e-9, abs=1e-13)


def test_pvalue_monotone_in_overlap():
    for n in range(0, 10):
        assert (hypergeom_pvalue(30, 12, 10, n + 1)
                <= hypergeom_pvalue(30, 12, 10, n))


def test_pvalue_rejects_inconsistent_margins():
    with pytest.raises(ValueError):
        hypergeom_pvalue(10, 11, 4, 2)
    with pytest.raises(ValueError):
        hypergeom_pvalue(10, 5, 4, 5)
    with pytest.raises(ValueError):
        hypergeom_pvalue(10, 5, 4, -1)


def test_pvalue_batch_is_bit_identical_to_scalar():
    rng = np.random.default_rng(41)
    t = 60
    ki = rng.integers(1, t, size=300)
    kj = rng.integers(1, t, size=300)
    n = np.minimum(ki, kj) - rng.integers(0, 3, size=300)
    n = np.maximum(n, 0)
    batch = hypergeom_pvalues(t, ki, kj, n)
    scalar = np.array([hypergeom_pvalue(t, int(a), int(b), int(c))
                       for a, b, c in zip(ki, kj, n)])
    assert np.array_equal(batch, scalar)


# -- thresholds ---------------------------------------------------------------


def test_bonferroni_reproduces_reported_threshold():
    assert bonferroni_threshold(4844) == pytest.approx(9.47e-11, rel=1e-3)


def test_bonferroni_small_cases():
    assert bonferroni_threshold(2, alpha=0.01) == pytest.approx(0.01 / 9)
    assert bonferroni_threshold(100, alpha=0.05) == pytest.approx(0.1 / 89100)
    with pytest.raises(ValueError):
        bonferroni_threshold(1)


def test_fdr_worked_example():
    thr = fdr_threshold([0.001, 0.008, 0.04, 0.2], 0.05, 4)
    assert thr == pytest.approx(0.008)


def test_fdr_takes_last_qualifying_rank():
    # k=2 fails but k=3 passes; BH keeps everything up to rank 3
    thr = fdr_threshold([0.012, 0.026, 0.037], 0.05, 4)
    assert thr == pytest.approx(0.037)


def test_fdr_none_when_nothing_qualifies():
    assert fdr_threshold([1.0, 1.0, 1.0], 0.05, 3) is None
    assert fdr_threshold([], 0.05, 10) is None


def test_fdr_requires_consistent_test_count():
    with pytest.raises(ValueError):
        fdr_threshold([0.1, 0.2], 0.05, 1)


# -- validation ---------------------------------------------------------------


def ring_states(n_background=25, t=60, ring=5, ring_days=15, seed=2):
    """Planted co-buying ring on a sparse background."""
    rng = np.random.default_rng(seed)
    n = ring + n_background
    codes = np.zeros((n, t), dtype=np.int8)
    codes[:ring, :ring_days] = STATE_B
    for k in range(ring, n):
        days = rng.choice(t, size=4, replace=False)
        codes[k, days] = rng.choice([STATE_B, STATE_S], size=4)
    return states_from_codes(codes)


def test_validate_planted_ring_under_bonferroni():
    sm = ring_states()
    table = compute_pvalues(project_traders(sm))
    net = validate_edges(table, correction="bonferroni", alpha=0.01)
    ring_ids = set(sm.investors[:5])
    got = {(a, b) for a, b, ty, w, p in net.edges() if ty == "bb"
           and a in ring_ids and b in ring_ids}
    assert len(got) == 10          # all C(5,2) ring pairs survive
    # oracle: the ring-pair p-value must clear the printed threshold
    p_pair = hyper_sf_oracle(60, 15, 15, 15)
    assert p_pair < bonferroni_threshold(30, 0.01)


def test_bonferroni_network_is_subset_of_fdr():
    sm = ring_states(seed=5)
    table = compute_pvalues(project_traders(sm))
    bon = validate_edges(table, correction="bonferroni", alpha=0.01)
    fdr = validate_edges(table, correction="fdr", alpha=0.01)
    bon_set = {(a, b, ty) for a, b, ty, w, p in bon.edges()}
    fdr_set = {(a, b, ty) for a, b, ty, w, p in fdr.edges()}
    assert bon_set <= fdr_set


def test_validate_uses_full_pair_count_not_materialized_edges():
    # 10 traders -> N_test = 9 * 45 = 405 even with 1 materialized edge
    codes = np.zeros((10, 40), dtype=np.int8)
    codes[0, :20] = STATE_B
    codes[1, :20] = STATE_B
    table = compute_pvalues(project_traders(states_from_codes(codes)))
    assert table.weights.size == 1
    net = validate_edges(table, correction="fdr", alpha=0.01)
    # p = 1/C(40,20) ~ 7e-12 <= 1 * 0.01/405 -> validated
    assert net.threshold == pytest.approx(hyper_sf_oracle(40, 20, 20, 20))
    assert len(list(net.edges())) == 1
    assert net.n_tests == 405


def test_validate_fixed_threshold_and_counts():
    sm = ring_states(seed=9)
    table = compute_pvalues(project_traders(sm))
    net = validate_edges(table, correction="fixed", threshold=1e-8)
    assert all(p <= 1e-8 for *_rest, p in net.edges())
    assert sum(net.type_counts.values()) == len(list(net.edges()))
    assert net.type_counts["bb"] >= 10


def test_validate_empty_input():
    codes = np.zeros((3, 5), dtype=np.int8)
    table = compute_pvalues(project_traders(states_from_codes(codes)))
    net = validate_edges(table, correction="bonferroni", alpha=0.01)
    assert list(net.edges()) == []
    assert net.non_isolated == ()


def test_diagonal_subnetwork_keeps_diagonal_types_only():
    codes = np.zeros((4, 30), dtype=np.int8)
    codes[0, :12] = STATE_B
    codes[1, :12] = STATE_B
    codes[2, :12] = STATE_S
    codes[3, :12] = STATE_B     # b-s cross pairs give off-diagonal edges
    table = compute_pvalues(project_traders(states_from_codes(codes)))
    net = validate_edges(table, correction="fixed", threshold=1.0)
    diag = diagonal_subnetwork(net)
    assert {ty for _a, _b, ty, _w, _p in diag.edges()} <= {"bb", "ss", "bsbs"}
    assert sum(diag.type_counts.values()) == (net.type_counts["bb"]
                                              + net.type_counts["ss"]
                                              + net.type_counts["bsbs"])
    hand = {inv for a, b, *_ in diag.edges() for inv in (a, b)}
    assert set(diag.non_isolated) == hand


def test_threshold_sweep_monotone_and_argmax():
    sm = ring_states(seed=13)
    table = compute_pvalues(project_traders(sm))
    thresholds = [1e-14, 1e-10, 1e-6, 1e-3]
    sweep = threshold_sweep(table, thresholds,
                            lambda net: len(net.non_isolated))
    counts = [pt.n_edges for pt in sweep.points]
    assert counts == sorted(counts)
    best = max(sweep.points, key=lambda pt: pt.metric)
    assert sweep.best_threshold == best.threshold


def test_network_export_round_trip(tmp_path):
    sm = ring_states(seed=17)
    table = compute_pvalues(project_traders(sm))
    net = validate_edges(table, correction="bonferroni", alpha=0.01)
    csv_path, manifest_path = write_network(net, tmp_path, "svn")
    manifest = json.loads(manifest_path.read_text())
    assert manifest["correction"] == "bonferroni"
    assert manifest["n_investors"] == 30
    assert manifest["n_days"] == 60
    assert manifest["theta"] == 0.01
    assert manifest["type_counts"]["bb"] == sum(
        1 for *_x, ty, _w, _p in ((a, b, ty, w, p)
                                  for a, b, ty, w, p in net.edges()) if ty == "bb")
    with open(csv_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(list(net.edges()))
    assert set(rows[0]) == {"investor_i", "investor_j", "type", "weight",
                            "p_value", "validated"}


def test_pvalues_deterministic_across_worker_counts():
    sm = ring_states(seed=21)
    graph = project_traders(sm)
    t1 = compute_pvalues(graph, n_workers=1)
    t4 = compute_pvalues(graph, n_workers=4)
    assert np.array_equal(t1.pvalues, t4.pvalues)
    assert np.array_equal(t1.i, t4.i)
    assert np.array_equal(t1.types, t4.types)
