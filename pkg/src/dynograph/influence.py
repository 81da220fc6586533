"""Influence graphs and the local-independence query calculus.

An edge ``(j, k)`` means *j directly influences k*: j's left-limit value
appears in k's drift (or intensity).  Everything else is read off the
graph: influence is reachability, blocking is reachability with the
blockers removed, dynamical independence forbids paths either way and a
common ancestor.

All queries return a :class:`QueryVerdict` carrying a witness (a path or a
node set) that justifies the answer.
"""
from __future__ import annotations

import json
import warnings
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import expr as ex
from .errors import ModelError, QueryError
from .model import Kind, SystemSpec, dependencies, input_dependencies, validate

__all__ = [
    "InfluenceGraph", "Relation", "QueryVerdict", "derive_graph", "direct_influence",
    "wcli", "influence", "indirect_influence", "scli_literal", "blocks",
    "dynamical_independence", "lemma3_partition", "non_influenced", "FaithfulnessViolation",
    "UnstableInfluence", "faithfulness_across", "unstable_influences", "instrumental_query",
    "export_dot", "to_json", "from_json", "numeric_dependence_probe", "probe_mismatches", "ancestors", "descendants",
]


@dataclass(frozen=True)
class InfluenceGraph:
    nodes: tuple[str, ...]
    edges: frozenset[tuple[str, str]]
    # optional per-edge labels, e.g. "informational"; never affects queries
    labels: Mapping[tuple[str, str], str] = field(default_factory=dict, compare=False)
    sources: frozenset[str] = field(default=frozenset(), compare=False)

    def __post_init__(self):
        nodes = tuple(self.nodes)
        if len(set(nodes)) != len(nodes):
            raise ModelError("duplicate node names")
        edges = frozenset((str(a), str(b)) for a, b in self.edges)
        known = set(nodes)
        for a, b in edges:
            if a == b:
                raise ModelError(f"self-loop on {a!r} not allowed")
            if a not in known or b not in known:
                raise ModelError(f"edge ({a}, {b}) uses an undeclared node")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "labels", dict(self.labels))
        object.__setattr__(self, "sources", frozenset(self.sources))

    def successors(self, node: str) -> list[str]:
        return [b for a, b in self._sorted_edges() if a == node]

    def predecessors(self, node: str) -> list[str]:
        return [a for a, b in self._sorted_edges() if b == node]

    def _sorted_edges(self) -> list[tuple[str, str]]:
        order = {n: i for i, n in enumerate(self.nodes)}
        return sorted(self.edges, key=lambda e: (order[e[0]], order[e[1]]))

    def has_edge(self, j: str, k: str) -> bool:
        return (j, k) in self.edges

    def subgraph(self, keep: Iterable[str]) -> "InfluenceGraph":
        keep = set(keep)
        return InfluenceGraph(tuple(n for n in self.nodes if n in keep),
                              frozenset((a, b) for a, b in self.edges if a in keep and b in keep))


class Relation(str, Enum):
    WCLI = "wcli"
    DIRECT = "direct"
    SCLI_LITERAL = "scli-literal"
    INFLUENCE = "influence"
    INDIRECT = "indirect"
    BLOCKS = "blocks"
    DYNINDEP = "dynindep"
    NONINFLUENCED = "noninfluenced"
    FAITHFUL = "faithful"
    INSTRUMENTAL = "instrumental"


@dataclass(frozen=True)
class QueryVerdict:
    relation: Relation
    holds: bool
    witness: Optional[tuple] = None
    note: str = ""
    caveats: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "relation": self.relation.value,
            "holds": self.holds,
            "witness": None if self.witness is None else list(self.witness),
            "note": self.note,
            "caveats": list(self.caveats),
        }


def derive_graph(spec: SystemSpec) -> InfluenceGraph:
    """Graph with an edge j -> k iff j appears in k's drift.

    Inputs are source nodes; attributes are not nodes.
    """
    report = validate(spec)
    if not report:
        raise ModelError("cannot derive a graph from an invalid spec: "
                         + "; ".join(str(v) for v in report))
    nodes = tuple(spec.input_names) + tuple(spec.component_names)
    edges = set()
    for c in spec.components:
        for j in dependencies(spec, c.name) | input_dependencies(spec, c.name):
            edges.add((j, c.name))
    return InfluenceGraph(nodes, frozenset(edges), sources=frozenset(spec.input_names))


# --- primitives ----------------------------------------------------------

def _check_nodes(g: InfluenceGraph, *names: str) -> None:
    known = set(g.nodes)
    for n in names:
        if n not in known:
            raise QueryError(f"unknown node {n!r}")


def _check_pair(g: InfluenceGraph, j: str, k: str) -> None:
    _check_nodes(g, j, k)
    if j == k:
        raise QueryError("relation is undefined on the diagonal (j == k)")


def _shortest_path(g: InfluenceGraph, src: str, dst: str,
                   removed: frozenset[str] = frozenset()) -> Optional[list[str]]:
    """BFS over successors in declaration order, so the witness is deterministic."""
    if src in removed or dst in removed:
        return None
    succ: dict[str, list[str]] = {n: [] for n in g.nodes}
    for a, b in g._sorted_edges():
        succ[a].append(b)
    parent: dict[str, Optional[str]] = {src: None}
    queue = deque([src])
    while queue:
        node = queue.popleft()
        for nxt in succ[node]:
            if nxt in parent or nxt in removed:
                continue
            parent[nxt] = node
            if nxt == dst:
                path = [dst]
                while parent[path[-1]] is not None:
                    path.append(parent[path[-1]])
                return path[::-1]
            queue.append(nxt)
    return None


def ancestors(g: InfluenceGraph, node: str) -> set[str]:
    """Nodes with a directed path to ``node`` (``node`` itself excluded)."""
    _check_nodes(g, node)
    pred: dict[str, list[str]] = {n: [] for n in g.nodes}
    for a, b in g.edges:
        pred[b].append(a)
    seen: set[str] = set()
    stack = [node]
    while stack:
        for p in pred[stack.pop()]:
            if p not in seen:
                seen.add(p)
                stack.append(p)
    seen.discard(node)
    return seen


def descendants(g: InfluenceGraph, node: str) -> set[str]:
    _check_nodes(g, node)
    succ: dict[str, list[str]] = {n: [] for n in g.nodes}
    for a, b in g.edges:
        succ[a].append(b)
    seen: set[str] = set()
    stack = [node]
    while stack:
        for s in succ[stack.pop()]:
            if s not in seen:
                seen.add(s)
                stack.append(s)
    seen.discard(node)
    return seen


# --- queries -------------------------------------------------------------

def direct_influence(g: InfluenceGraph, j: str, k: str) -> QueryVerdict:
    _check_pair(g, j, k)
    holds = g.has_edge(j, k)
    return QueryVerdict(Relation.DIRECT, holds, (j, k) if holds else None)


def wcli(g: InfluenceGraph, j: str, k: str) -> QueryVerdict:
    """k is weakly locally independent of j: no edge j -> k."""
    _check_pair(g, j, k)
    holds = not g.has_edge(j, k)
    return QueryVerdict(Relation.WCLI, holds, None if holds else (j, k))


def influence(g: InfluenceGraph, j: str, k: str) -> QueryVerdict:
    """j influences k (at least indirectly): a directed path j -> ... -> k."""
    _check_pair(g, j, k)
    path = _shortest_path(g, j, k)
    return QueryVerdict(Relation.INFLUENCE, path is not None,
                        tuple(path) if path is not None else None)


def indirect_influence(g: InfluenceGraph, j: str, k: str) -> QueryVerdict:
    """Influence without direct influence; witness is a path of length >= 2."""
    _check_pair(g, j, k)
    if g.has_edge(j, k):
        return QueryVerdict(Relation.INDIRECT, False, (j, k), note="direct influence")
    path = _shortest_path(g, j, k)
    return QueryVerdict(Relation.INDIRECT, path is not None,
                        tuple(path) if path is not None else None)


def scli_literal(g: InfluenceGraph, j: str, k: str) -> QueryVerdict:
    """Two-hop reading of strong local independence.

    Holds iff there is no edge j -> k and no node D with j -> D -> k.  Longer
    chains are *not* considered; use :func:`influence` for the path notion.
    """
    _check_pair(g, j, k)
    if g.has_edge(j, k):
        return QueryVerdict(Relation.SCLI_LITERAL, False, (j, k))
    for d in g.nodes:
        if d not in (j, k) and g.has_edge(j, d) and g.has_edge(d, k):
            return QueryVerdict(Relation.SCLI_LITERAL, False, (j, d, k))
    return QueryVerdict(Relation.SCLI_LITERAL, True)


def blocks(g: InfluenceGraph, blockers: Iterable[str], l: str, k: str) -> QueryVerdict:
    """Every directed path from l to k goes through a blocker.

    Holds vacuously when there is no path at all.  On failure the witness is
    a path that avoids all blockers.
    """
    blockers = frozenset(blockers)
    _check_nodes(g, l, k, *sorted(blockers))
    if l == k:
        raise QueryError("blocking is undefined for l == k")
    if l in blockers or k in blockers:
        raise QueryError("source and target must not be blockers")
    path = _shortest_path(g, l, k, removed=blockers)
    if path is not None:
        return QueryVerdict(Relation.BLOCKS, False, tuple(path))
    vacuous = _shortest_path(g, l, k) is None
    return QueryVerdict(Relation.BLOCKS, True, tuple(sorted(blockers)),
                        note="vacuous: no path" if vacuous else "")


def dynamical_independence(g: InfluenceGraph, j: str, k: str) -> QueryVerdict:
    """No path j -> k, none k -> j, and no common ancestor distinct from both."""
    _check_pair(g, j, k)
    for a, b in ((j, k), (k, j)):
        path = _shortest_path(g, a, b)
        if path is not None:
            return QueryVerdict(Relation.DYNINDEP, False, tuple(path), note="path")
    common = (ancestors(g, j) & ancestors(g, k)) - {j, k}
    if common:
        w = min(common, key=g.nodes.index)
        return QueryVerdict(Relation.DYNINDEP, False, (w,), note="common ancestor")
    return QueryVerdict(Relation.DYNINDEP, True)


def lemma3_partition(g: InfluenceGraph, j: str, k: str) -> tuple[frozenset, frozenset, frozenset]:
    """Split the nodes into two non-influenced groups around j and k, plus the rest.

    Requires j and k dynamically independent.  A is j with its ancestors, B is
    k with its ancestors, C is everything else.
    """
    if not dynamical_independence(g, j, k).holds:
        raise QueryError(f"{j} and {k} are not dynamically independent")
    a = frozenset({j} | ancestors(g, j))
    b = frozenset({k} | ancestors(g, k))
    c = frozenset(g.nodes) - a - b
    return a, b, c


def non_influenced(g: InfluenceGraph, group: Iterable[str]) -> QueryVerdict:
    """No edge enters ``group`` from outside it."""
    group = frozenset(group)
    _check_nodes(g, *sorted(group))
    for a, b in g._sorted_edges():
        if b in group and a not in group:
            return QueryVerdict(Relation.NONINFLUENCED, False, (a, b))
    return QueryVerdict(Relation.NONINFLUENCED, True)


@dataclass(frozen=True)
class FaithfulnessViolation:
    """Edge j -> k present in the larger system but absent from the smaller one."""
    j: str
    k: str
    small: int
    large: int


@dataclass(frozen=True)
class UnstableInfluence:
    """Edge j -> k of a smaller system that is not direct in a larger one.

    This is allowed by faithfulness.  ``becomes`` is ``"indirect"`` when the
    larger graph still has a path j -> k, ``"vanished"`` otherwise (for
    instance because a newly modelled confounder explains the dependence).
    """
    j: str
    k: str
    small: int
    large: int
    becomes: str
    witness: Optional[tuple[str, ...]] = None


def _check_nested(graphs: Sequence[InfluenceGraph]) -> None:
    for i, (a, b) in enumerate(zip(graphs, graphs[1:])):
        if not set(a.nodes) <= set(b.nodes):
            raise ModelError(f"graph {i} is not nested in graph {i + 1}")


def faithfulness_across(graphs: Sequence[InfluenceGraph]) -> list[FaithfulnessViolation]:
    """Check that direct influences of larger systems persist in smaller ones.

    ``graphs`` is ordered from smallest to largest system.  Every pair
    (small, large) is compared, not only neighbours.  An empty list means the
    sequence is consistent with a faithful probability.
    """
    graphs = list(graphs)
    _check_nested(graphs)
    out = []
    for lo in range(len(graphs)):
        small_nodes = set(graphs[lo].nodes)
        for hi in range(lo + 1, len(graphs)):
            for j, k in graphs[hi]._sorted_edges():
                if j in small_nodes and k in small_nodes and not graphs[lo].has_edge(j, k):
                    out.append(FaithfulnessViolation(j, k, lo, hi))
    return out


def unstable_influences(graphs: Sequence[InfluenceGraph]) -> list[UnstableInfluence]:
    """Direct influences of smaller systems that are not direct in larger ones."""
    graphs = list(graphs)
    _check_nested(graphs)
    out = []
    for lo in range(len(graphs)):
        for hi in range(lo + 1, len(graphs)):
            for j, k in graphs[lo]._sorted_edges():
                if not graphs[hi].has_edge(j, k):
                    path = _shortest_path(graphs[hi], j, k)
                    out.append(UnstableInfluence(
                        j, k, lo, hi, "indirect" if path else "vanished",
                        tuple(path) if path else None))
    return out


INSTRUMENTAL_CAVEATS = (
    "the true probability is assumed faithful for every nested sequence",
    "I and the target have no common ancestor and independent initial noise",
    "initial values of I are independent of the other components given the attributes",
    "I is non-influenced in every system of the sequence (e.g. randomised)",
)


def instrumental_query(g_small: InfluenceGraph, g_large: InfluenceGraph,
                       instrument: str, j: str, k: str) -> QueryVerdict:
    """Graph part of the instrumental-process argument for j causing k.

    Holds iff the instrument is non-influenced in the large graph, directly
    influences k in the small graph, and j blocks every path from the
    instrument to k in the large graph.  The probabilistic assumptions are
    returned as caveats and are not checked.
    """
    _check_nodes(g_small, instrument, k)
    _check_nodes(g_large, instrument, j, k)
    if len({instrument, j, k}) != 3:
        raise QueryError("instrument, j and k must be distinct")
    reasons = []
    ni = non_influenced(g_large, {instrument})
    if not ni.holds:
        reasons.append(f"{instrument} is influenced ({ni.witness[0]} -> {ni.witness[1]})")
    if not g_small.has_edge(instrument, k):
        reasons.append(f"{instrument} does not directly influence {k} in the small system")
    bl = blocks(g_large, {j}, instrument, k)
    if not bl.holds:
        reasons.append(f"{j} does not block {' -> '.join(bl.witness)}")
    holds = not reasons
    note = (f"causal influence of {j} on {k} under the non-influence/instrumental assumptions"
            if holds else "; ".join(reasons))
    return QueryVerdict(Relation.INSTRUMENTAL, holds, (instrument, j, k) if holds else None,
                        note=note, caveats=INSTRUMENTAL_CAVEATS)


# --- export --------------------------------------------------------------

def _dot_id(name: str) -> str:
    return name if name.isidentifier() else json.dumps(name)


def export_dot(g: InfluenceGraph, name: str = "influence") -> str:
    """Deterministic DOT text: nodes in declaration order, edges sorted."""
    lines = [f"digraph {_dot_id(name)} {{"]
    for n in g.nodes:
        attrs = " [shape=box]" if n in g.sources else ""
        lines.append(f"  {_dot_id(n)}{attrs};")
    for a, b in sorted(g.edges):
        label = g.labels.get((a, b))
        attrs = f' [style=dotted, label="{label}"]' if label else ""
        lines.append(f"  {_dot_id(a)} -> {_dot_id(b)}{attrs};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def to_json(g: InfluenceGraph) -> str:
    doc = {"nodes": list(g.nodes), "edges": [list(e) for e in sorted(g.edges)]}
    if g.sources:
        doc["sources"] = sorted(g.sources)
    if g.labels:
        doc["labels"] = [[a, b, g.labels[(a, b)]] for a, b in sorted(g.labels)]
    return json.dumps(doc, indent=2) + "\n"


def from_json(text: str) -> InfluenceGraph:
    doc = json.loads(text)
    labels = {(a, b): lab for a, b, lab in doc.get("labels", [])}
    return InfluenceGraph(tuple(doc["nodes"]), frozenset(tuple(e) for e in doc["edges"]),
                          labels=labels, sources=frozenset(doc.get("sources", [])))


# --- numeric cross-check ---------------------------------------------------

def numeric_dependence_probe(spec: SystemSpec, j: str, k: str, probe_count: int = 32,
                             perturbation: float = 0.5, seed: int = 0) -> bool:
    """Does k's drift numerically change when component j moves?

    Evaluates the drift at ``probe_count`` random states (counting components
    at 0, 1 or 2) with j shifted by +/- ``perturbation``; true iff some pair differs by more than 1e-12
    relative.  Evaluation errors propagate.
    """
    if not validate(spec):
        raise ModelError("probe needs a valid spec")
    comp = spec.component(k)
    spec.component(j)
    rng = np.random.default_rng(seed)
    names = spec.component_names
    counting = [c.kind is Kind.COUNTING for c in spec.components]
    for _ in range(probe_count):
        # counting states are small integers so indicators such as ind(N == 0) fire
        draws = rng.uniform(-2.0, 2.0, len(names))
        state = {n: float(np.floor(abs(v))) if cnt else float(v)
                 for n, v, cnt in zip(names, draws, counting)}
        attrs = {a.name: float(rng.normal(a.value.mean, a.value.sd)) if hasattr(a.value, "sd")
                 else a.value.value for a in spec.attributes}
        inputs = {i.name: float(rng.choice(i.values)) for i in spec.inputs}
        t = float(rng.uniform(0.0, 10.0))
        lo = dict(state, **{j: state[j] - perturbation})
        hi = dict(state, **{j: state[j] + perturbation})
        f_lo = ex.evaluate(comp.drift, t, lo, attrs, inputs)
        f_hi = ex.evaluate(comp.drift, t, hi, attrs, inputs)
        scale = max(abs(f_lo), abs(f_hi), 1e-300)
        if abs(f_hi - f_lo) > 1e-12 * scale:
            return True
    return False


def probe_mismatches(spec: SystemSpec, probe_count: int = 32,
                     perturbation: float = 0.5) -> list[tuple[str, str]]:
    """Edges found syntactically whose drift does not move numerically.

    A warning is issued for each, e.g. for a drift written ``X1 - X1``.
    """
    out = []
    for k in spec.component_names:
        for j in sorted(dependencies(spec, k)):
            if not numeric_dependence_probe(spec, j, k, probe_count, perturbation):
                warnings.warn(f"{k}'s drift mentions {j} but does not vary with it numerically",
                              stacklevel=2)
                out.append((j, k))
    return out
