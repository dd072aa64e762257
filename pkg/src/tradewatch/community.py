"""Map-equation community detection and cluster enrichment tests.

The validated network is clustered by minimizing the two-level map equation
(the expected description length of a random walk) with a greedy move /
aggregate loop plus fine-tuning at node granularity.  Cluster composition is
then characterized by hypergeometric over/under-expression tests of node
attributes (investor types and co-occurrence link types).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from .market_data import INVESTOR_TYPES
from .svn import ValidatedNetwork, fdr_threshold, hypergeom_pvalue

_GAIN_EPS = 1e-12       # accept a move only when it buys at least this many bits


def _plogp(x: float) -> float:
    return x * math.log2(x) if x > 0.0 else 0.0


def _collapse(network) -> list[tuple[str, str, float]]:
    """Undirected weighted edge list with parallel link types summed."""
    if isinstance(network, ValidatedNetwork):
        rows = ((a, b, float(w)) for a, b, _ty, w, _p in network.edges())
    else:
        rows = ((a, b, float(w)) for a, b, w in network)
    acc: dict[tuple[str, str], float] = {}
    for a, b, w in rows:
        if a == b:
            raise ValueError(f"self-loop on node {a!r}")
        key = (a, b) if a < b else (b, a)
        acc[key] = acc.get(key, 0.0) + w
    return [(a, b, w) for (a, b), w in sorted(acc.items())]


@dataclass
class _Graph:
    """Adjacency in visit-rate units: all weights divided by 2W."""

    nodes: tuple[str, ...]
    adj: list[dict[int, float]]
    self_rate: list[float]
    p: np.ndarray

    @property
    def n(self) -> int:
        return len(self.nodes)


def _build_graph(edges: list[tuple[str, str, float]]) -> _Graph:
    nodes = tuple(sorted({x for a, b, _w in edges for x in (a, b)}))
    index = {node: k for k, node in enumerate(nodes)}
    total = 2.0 * sum(w for _a, _b, w in edges)
    adj: list[dict[int, float]] = [{} for _ in nodes]
    for a, b, w in edges:
        u, v = index[a], index[b]
        rate = w / total
        adj[u][v] = adj[u].get(v, 0.0) + rate
        adj[v][u] = adj[v].get(u, 0.0) + rate
    p = np.array([sum(neigh.values()) for neigh in adj])
    return _Graph(nodes, adj, [0.0] * len(nodes), p)


def map_equation(network, assignment: Mapping[str, object]) -> float:
    """Two-level description length (bits) of a partition of the network.

    `network` is a validated network or an iterable of (a, b, weight) edges;
    `assignment` maps every node to an arbitrary cluster label.  Pure
    recomputation, independent of how the partition was produced.
    """
    edges = _collapse(network)
    if not edges:
        return 0.0
    graph = _build_graph(edges)
    labels = [assignment[node] for node in graph.nodes]
    module_of = {lab: k for k, lab in enumerate(dict.fromkeys(labels))}
    modules = [module_of[lab] for lab in labels]
    n_mod = len(module_of)
    p_mod = [0.0] * n_mod
    q_mod = [0.0] * n_mod
    for v in range(graph.n):
        p_mod[modules[v]] += graph.p[v]
        for u, rate in graph.adj[v].items():
            if modules[u] != modules[v]:
                q_mod[modules[v]] += rate
    q = sum(q_mod)
    return (_plogp(q)
            - 2.0 * sum(_plogp(x) for x in q_mod)
            + sum(_plogp(qm + pm) for qm, pm in zip(q_mod, p_mod))
            - sum(_plogp(x) for x in graph.p))


def _move_phase(graph: _Graph, init: np.ndarray, rng: np.random.Generator,
                emit: Callable[[np.ndarray, float], None] | None,
                start_terms: float) -> tuple[np.ndarray, bool, float]:
    """Sweep nodes in random order, applying codelength-decreasing moves.

    Returns (modules, whether anything moved, partition terms of the final
    state).  `start_terms` is the current partition cost so the running
    codelength can be reported through `emit` after every accepted move.
    """
    modules = init.copy()
    n = graph.n
    p_mod = np.zeros(n)
    q_mod = np.zeros(n)
    ext = np.empty(n)
    for v in range(n):
        p_mod[modules[v]] += graph.p[v]
        ext[v] = graph.p[v] - 2.0 * graph.self_rate[v]
        for u, rate in graph.adj[v].items():
            if modules[u] != modules[v]:
                q_mod[modules[v]] += rate
    q_sum = float(q_mod.sum())
    terms = start_terms
    changed = False

    order = np.arange(n)
    while True:
        rng.shuffle(order)
        moved = 0
        for v in order:
            a = int(modules[v])
            to_mod: dict[int, float] = {}
            for u, rate in graph.adj[v].items():
                m = int(modules[u])
                to_mod[m] = to_mod.get(m, 0.0) + rate
            d_va = to_mod.get(a, 0.0)
            qa = q_mod[a]
            qa2 = qa - ext[v] + 2.0 * d_va
            pv = graph.p[v]
            best_dl, best_m, best_qb2 = -_GAIN_EPS, a, 0.0
            for m in sorted(to_mod):
                if m == a:
                    continue
                d_vb = to_mod[m]
                qb = q_mod[m]
                qb2 = qb + ext[v] - 2.0 * d_vb
                q2 = q_sum - qa - qb + qa2 + qb2
                dl = (_plogp(q2) - _plogp(q_sum)
                      - 2.0 * (_plogp(qa2) - _plogp(qa)
                               + _plogp(qb2) - _plogp(qb))
                      + _plogp(qa2 + p_mod[a] - pv) - _plogp(qa + p_mod[a])
                      + _plogp(qb2 + p_mod[m] + pv) - _plogp(qb + p_mod[m]))
                if dl < best_dl:
                    best_dl, best_m, best_qb2 = dl, m, qb2
            if best_m != a:
                q_sum += qa2 + best_qb2 - qa - q_mod[best_m]
                q_mod[a] = qa2
                q_mod[best_m] = best_qb2
                p_mod[a] -= pv
                p_mod[best_m] += pv
                modules[v] = best_m
                terms += best_dl
                moved += 1
                changed = True
                if emit is not None:
                    emit(modules, terms)
        if moved == 0:
            break
    return modules, changed, terms


def _compact(assign: np.ndarray) -> np.ndarray:
    _uniq, inverse = np.unique(assign, return_inverse=True)
    return inverse.ravel()


def _aggregate(graph: _Graph, assign: np.ndarray) -> _Graph:
    n_mod = int(assign.max()) + 1
    adj: list[dict[int, float]] = [{} for _ in range(n_mod)]
    self_rate = [0.0] * n_mod
    for v in range(graph.n):
        mv = int(assign[v])
        self_rate[mv] += graph.self_rate[v]
        for u, rate in graph.adj[v].items():
            if u < v:
                continue
            mu = int(assign[u])
            if mu == mv:
                self_rate[mv] += rate
            else:
                adj[mv][mu] = adj[mv].get(mu, 0.0) + rate
                adj[mu][mv] = adj[mu].get(mv, 0.0) + rate
    p = np.zeros(n_mod)
    np.add.at(p, assign, graph.p)
    return _Graph(tuple(str(m) for m in range(n_mod)), adj, self_rate, p)


def _partition_terms(graph: _Graph, assign: np.ndarray) -> float:
    n_mod = int(assign.max()) + 1
    p_mod = np.zeros(n_mod)
    q_mod = np.zeros(n_mod)
    np.add.at(p_mod, assign, graph.p)
    for v in range(graph.n):
        for u, rate in graph.adj[v].items():
            if assign[u] != assign[v]:
                q_mod[assign[v]] += rate
    return (_plogp(float(q_mod.sum()))
            - 2.0 * sum(_plogp(float(x)) for x in q_mod)
            + sum(_plogp(float(qm + pm)) for qm, pm in zip(q_mod, p_mod)))


@dataclass
class Partition:
    """Clusters of the non-isolated nodes, sized descending, ids from 1."""

    nodes: tuple[str, ...]
    assignment: dict[str, int]
    sizes: tuple[int, ...]
    codelength: float

    @property
    def n_clusters(self) -> int:
        return len(self.sizes)

    def members(self, cluster: int) -> tuple[str, ...]:
        return tuple(n for n in self.nodes if self.assignment[n] == cluster)


def _canonical_partition(nodes: tuple[str, ...], assign: np.ndarray,
                         codelength: float) -> Partition:
    groups: dict[int, list[str]] = {}
    for node, m in zip(nodes, assign):
        groups.setdefault(int(m), []).append(node)
    ordered = sorted(groups.values(), key=lambda g: (-len(g), min(g)))
    assignment = {node: cid for cid, grp in enumerate(ordered, start=1)
                  for node in grp}
    return Partition(nodes, assignment, tuple(len(g) for g in ordered),
                     codelength)


def infomap_partition(network, seed: int = 0, n_outer_iters: int = 10,
                      trace=None) -> Partition:
    """Minimize the map equation by greedy moves, aggregation and fine-tuning.

    Runs `n_outer_iters` seeded restarts with different sweep orders and
    keeps the lowest-codelength partition.  Deterministic given `seed`.
    """
    edges = _collapse(network)
    if not edges:
        return Partition((), {}, (), 0.0)
    graph = _build_graph(edges)
    base_entropy = -sum(_plogp(float(x)) for x in graph.p)

    def emitter(lift):
        if trace is None:
            return None

        def emit(modules: np.ndarray, terms: float) -> None:
            flat = lift(modules)
            trace(dict(zip(graph.nodes, flat.tolist())), terms + base_entropy)
        return emit

    best_assign, best_len = None, math.inf
    for child in np.random.SeedSequence(seed).spawn(max(1, n_outer_iters)):
        rng = np.random.default_rng(child)
        assign = np.arange(graph.n)
        terms = _partition_terms(graph, assign)
        while True:
            # fine-tune: single-node moves at the original granularity
            assign, moved_fine, terms = _move_phase(
                graph, assign, rng, emitter(lambda mods: mods), terms)
            assign = _compact(assign)
            moved_coarse = False
            while True:
                coarse = _aggregate(graph, assign)
                if coarse.n <= 1:
                    break
                base = assign.copy()
                sup, moved, terms = _move_phase(
                    coarse, np.arange(coarse.n), rng,
                    emitter(lambda mods: mods[base]), terms)
                if not moved:
                    break
                assign = _compact(sup[assign])
                moved_coarse = True
            if not (moved_fine or moved_coarse):
                break
        length = terms + base_entropy
        if length < best_len - 1e-12:
            best_assign, best_len = assign, length
    final = map_equation(edges, dict(zip(graph.nodes, best_assign.tolist())))
    return _canonical_partition(graph.nodes, best_assign, final)


# -- cluster enrichment ---------------------------------------------------------------


def over_expression_pvalue(n_v: int, n_c: int, n_q: int, n_cq: int) -> float:
    """P(X >= n_cq) for X ~ Hypergeometric(n_v, n_c, n_q)."""
    _check_enrichment_counts(n_v, n_c, n_q, n_cq)
    return hypergeom_pvalue(n_v, n_c, n_q, n_cq)


def under_expression_pvalue(n_v: int, n_c: int, n_q: int, n_cq: int) -> float:
    """P(X <= n_cq), summed over the mirrored upper tail for accuracy."""
    _check_enrichment_counts(n_v, n_c, n_q, n_cq)
    if n_cq < n_c + n_q - n_v:
        return 0.0
    return hypergeom_pvalue(n_v, n_v - n_c, n_q, n_q - n_cq)


def _check_enrichment_counts(n_v: int, n_c: int, n_q: int, n_cq: int) -> None:
    if not (0 <= n_cq <= min(n_c, n_q) and n_c <= n_v and n_q <= n_v):
        raise ValueError(
            f"inconsistent enrichment counts N_V={n_v} N_C={n_c} "
            f"N_Q={n_q} N_CQ={n_cq}")


@dataclass(frozen=True)
class EnrichmentResult:
    cluster: int
    attribute: str
    direction: str              # "over" | "under"
    p_value: float
    significant: bool


def node_attributes(network: ValidatedNetwork,
                    investor_types: Mapping[str, str]) -> dict[str, set[str]]:
    """Attribute labels per node: investor type plus incident link types."""
    out = {node: {investor_types[node]} for node in network.non_isolated}
    for a, b, ty, _w, _p in network.edges():
        out[a].add(ty)
        out[b].add(ty)
    return out


def characterize_clusters(partition: Partition,
                          attributes: Mapping[str, Iterable[str]],
                          correction: str = "fdr",
                          alpha: float = 0.01) -> list[EnrichmentResult]:
    """Test every (cluster, attribute) for over- and under-expression.

    The correction covers all n_clusters * n_attributes * 2 comparisons.
    """
    nodes = partition.nodes
    n_v = len(nodes)
    labels = sorted({lab for node in nodes for lab in attributes[node]})
    n_q = {lab: sum(1 for node in nodes if lab in attributes[node])
           for lab in labels}
    raw: list[tuple[int, str, str, float]] = []
    for cid in range(1, partition.n_clusters + 1):
        members = partition.members(cid)
        n_c = len(members)
        for lab in labels:
            n_cq = sum(1 for node in members if lab in attributes[node])
            raw.append((cid, lab, "over",
                        over_expression_pvalue(n_v, n_c, n_q[lab], n_cq)))
            raw.append((cid, lab, "under",
                        under_expression_pvalue(n_v, n_c, n_q[lab], n_cq)))
    n_tests = partition.n_clusters * len(labels) * 2
    if correction == "bonferroni":
        cut = alpha / n_tests if n_tests else None
    elif correction == "fdr":
        cut = fdr_threshold([p for *_k, p in raw], alpha, n_tests) if raw else None
    else:
        raise ValueError(f"unknown correction {correction!r}")
    return [EnrichmentResult(cid, lab, direction, p,
                             cut is not None and p <= cut)
            for cid, lab, direction, p in raw]


def enrichment_summary(results: Iterable[EnrichmentResult]) -> list[dict]:
    """One row per cluster with the significant attributes by column.

    OI/UI = over/under-expressed investor types, OC/UC = over/under-expressed
    co-occurrence link types.
    """
    rows: dict[int, dict[str, list[str]]] = {}
    for res in results:
        cell = rows.setdefault(res.cluster,
                               {"OI": [], "UI": [], "OC": [], "UC": []})
        if not res.significant:
            continue
        family = "I" if res.attribute in INVESTOR_TYPES else "C"
        cell[("O" if res.direction == "over" else "U") + family].append(
            res.attribute)
    return [{"cluster": cid, **{col: ", ".join(sorted(vals))
                                for col, vals in cells.items()}}
            for cid, cells in sorted(rows.items())]


def write_partition(partition: Partition, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["node", "cluster"])
        for node in partition.nodes:
            writer.writerow([node, partition.assignment[node]])


def write_enrichment(results: Iterable[EnrichmentResult], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cluster", "OI", "UI", "OC", "UC"])
        for row in enrichment_summary(results):
            writer.writerow([row["cluster"], row["OI"], row["UI"],
                             row["OC"], row["UC"]])
