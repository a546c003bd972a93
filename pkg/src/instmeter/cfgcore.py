"""Control-flow graphs, natural-loop extraction and loop relations.

Both the source side and the disassembly side are reduced to a :class:`Cfg`
so that loop structure can be compared independently of where it came from.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Iterable, Sequence


class CfgError(ValueError):
    pass


@dataclass(frozen=True)
class Node:
    id: int
    payload: Any = ()


@dataclass(frozen=True)
class Cfg:
    nodes: tuple[Node, ...]
    edges: tuple[tuple[int, int], ...]
    entry: int
    unreachable: frozenset[int] = frozenset()

    @property
    def node_ids(self) -> list[int]:
        return [n.id for n in self.nodes]

    def node(self, node_id: int) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def successors(self) -> dict[int, list[int]]:
        succ: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        for a, b in self.edges:
            if b not in succ[a]:
                succ[a].append(b)
        return succ

    def predecessors(self) -> dict[int, list[int]]:
        pred: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        for a, b in self.edges:
            if a not in pred[b]:
                pred[b].append(a)
        return pred

    def to_dict(self) -> dict:
        def text(payload):
            if isinstance(payload, str):
                return payload.splitlines()
            return [getattr(p, "raw", str(p)) for p in payload]

        return {
            "entry": self.entry,
            "nodes": [{"id": n.id, "text": text(n.payload)} for n in self.nodes],
            "edges": [{"from": a, "to": b} for a, b in self.edges],
        }


def build_cfg(nodes: Iterable, edges: Iterable, entry: int) -> Cfg:
    """Validate and freeze a CFG.

    ``nodes`` holds :class:`Node` objects, bare ids, or ``(id, payload)``
    pairs.  Unreachable nodes are kept and listed in ``Cfg.unreachable``.
    """
    frozen_nodes = []
    seen = set()
    for item in nodes:
        if isinstance(item, Node):
            node = item
        elif isinstance(item, tuple):
            node = Node(int(item[0]), item[1])
        else:
            node = Node(int(item))
        if node.id in seen:
            raise CfgError(f"duplicate node id {node.id}")
        seen.add(node.id)
        frozen_nodes.append(node)

    if entry not in seen:
        raise CfgError(f"entry node {entry} is not a node of the graph")

    frozen_edges = []
    for a, b in edges:
        a, b = int(a), int(b)
        for end in (a, b):
            if end not in seen:
                raise CfgError(f"edge ({a}, {b}) references missing node {end}")
        if (a, b) not in frozen_edges:
            frozen_edges.append((a, b))

    succ: dict[int, list[int]] = {n: [] for n in seen}
    for a, b in frozen_edges:
        succ[a].append(b)
    reached = {entry}
    stack = [entry]
    while stack:
        for nxt in succ[stack.pop()]:
            if nxt not in reached:
                reached.add(nxt)
                stack.append(nxt)

    return Cfg(tuple(frozen_nodes), tuple(frozen_edges), entry, frozenset(seen - reached))


def cfg_from_dict(doc: dict) -> Cfg:
    """Build a Cfg from the JSON interchange document."""
    try:
        entry = doc["entry"]
        raw_nodes = doc["nodes"]
        raw_edges = doc["edges"]
    except KeyError as exc:
        raise CfgError(f"CFG document missing key {exc.args[0]!r}") from None
    if not isinstance(entry, int) or not isinstance(raw_nodes, list) or not isinstance(raw_edges, list):
        raise CfgError("CFG document has wrong field types")
    nodes = []
    for n in raw_nodes:
        if not isinstance(n, dict) or not isinstance(n.get("id"), int):
            raise CfgError(f"malformed node record {n!r}")
        text = n.get("text", [])
        if isinstance(text, str):
            text = [text]
        nodes.append(Node(n["id"], "\n".join(text)))
    edges = []
    for e in raw_edges:
        if not isinstance(e, dict) or not isinstance(e.get("from"), int) or not isinstance(e.get("to"), int):
            raise CfgError(f"malformed edge record {e!r}")
        edges.append((e["from"], e["to"]))
    return build_cfg(nodes, edges, entry)


# -- dominators ---------------------------------------------------------------


def _reverse_postorder(cfg: Cfg) -> list[int]:
    succ = cfg.successors()
    order: list[int] = []
    visited = {cfg.entry}
    stack = [(cfg.entry, iter(succ[cfg.entry]))]
    while stack:
        node, it = stack[-1]
        for nxt in it:
            if nxt not in visited:
                visited.add(nxt)
                stack.append((nxt, iter(succ[nxt])))
                break
        else:
            stack.pop()
            order.append(node)
    order.reverse()
    return order


def immediate_dominators(cfg: Cfg) -> dict[int, int]:
    """Cooper/Harvey/Kennedy iterative idom computation over reachable nodes."""
    rpo = _reverse_postorder(cfg)
    index = {n: i for i, n in enumerate(rpo)}
    pred = cfg.predecessors()
    idom = {cfg.entry: cfg.entry}

    def intersect(a, b):
        while a != b:
            while index[a] > index[b]:
                a = idom[a]
            while index[b] > index[a]:
                b = idom[b]
        return a

    changed = True
    while changed:
        changed = False
        for node in rpo[1:]:
            new = None
            for p in pred[node]:
                if p in idom:
                    new = p if new is None else intersect(p, new)
            if idom.get(node) != new:
                idom[node] = new
                changed = True
    return idom


def dominates(idom: dict[int, int], a: int, b: int) -> bool:
    """True when ``a`` dominates ``b`` (reflexive)."""
    if b not in idom:
        return False
    while True:
        if a == b:
            return True
        parent = idom[b]
        if parent == b:
            return False
        b = parent


# -- loops --------------------------------------------------------------------


@dataclass(frozen=True)
class Loop:
    id: int
    header: int
    body: frozenset[int]
    back_edge: tuple[int, int]
    irreducible: bool = False

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "header": self.header,
            "body": sorted(self.body),
            "back_edge": list(self.back_edge),
            "irreducible": self.irreducible,
        }


def _natural_loop_body(pred: dict[int, list[int]], header: int, source: int) -> set[int]:
    body = {header, source}
    stack = [source] if source != header else []
    while stack:
        for p in pred[stack.pop()]:
            if p not in body:
                body.add(p)
                stack.append(p)
    return body


def _strongly_connected(nodes: Sequence[int], succ: dict[int, list[int]]) -> list[set[int]]:
    # iterative Tarjan
    index: dict[int, int] = {}
    low: dict[int, int] = {}
    on_stack: set[int] = set()
    stack: list[int] = []
    out: list[set[int]] = []
    counter = 0
    for root in nodes:
        if root in index:
            continue
        work = [(root, iter(succ[root]))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            node, it = work[-1]
            advanced = False
            for nxt in it:
                if nxt not in index:
                    index[nxt] = low[nxt] = counter
                    counter += 1
                    stack.append(nxt)
                    on_stack.add(nxt)
                    work.append((nxt, iter(succ[nxt])))
                    advanced = True
                    break
                if nxt in on_stack:
                    low[node] = min(low[node], index[nxt])
            if advanced:
                continue
            work.pop()
            if work:
                low[work[-1][0]] = min(low[work[-1][0]], low[node])
            if low[node] == index[node]:
                comp = set()
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.add(w)
                    if w == node:
                        break
                out.append(comp)
    return out


def extract_loops(cfg: Cfg) -> list[Loop]:
    """One natural loop per dominator back edge, ordered by (header, source).

    Cycles left over after removing back edges come from irreducible regions;
    each such strongly connected component is reported as one loop flagged
    ``irreducible``.
    """
    idom = immediate_dominators(cfg)
    pred = cfg.predecessors()
    reach_pred = {n: [p for p in ps if p in idom] for n, ps in pred.items()}

    found: list[tuple[int, int, frozenset[int], bool]] = []
    back_edges = set()
    for a, b in cfg.edges:
        if a in idom and dominates(idom, b, a):
            back_edges.add((a, b))
            found.append((b, a, frozenset(_natural_loop_body(reach_pred, b, a)), False))

    succ = {n: [] for n in idom}
    for a, b in cfg.edges:
        if a in idom and (a, b) not in back_edges:
            succ[a].append(b)
    for comp in _strongly_connected(sorted(idom), succ):
        if len(comp) < 2:
            continue
        entries = sorted(n for n in comp if any(p not in comp for p in reach_pred[n]) or n == cfg.entry)
        header = entries[0] if entries else min(comp)
        sources = sorted(p for p in reach_pred[header] if p in comp)
        found.append((header, sources[0], frozenset(comp), True))

    found.sort(key=lambda t: (t[0], t[1]))
    return [
        Loop(id=i + 1, header=h, body=body, back_edge=(src, h), irreducible=irr)
        for i, (h, src, body, irr) in enumerate(found)
    ]


# -- relations ----------------------------------------------------------------


class RelationKind(str, enum.Enum):
    SUBSET = "Subset"
    SUPERSET = "Superset"
    INTERSECT = "Intersect"
    EQUAL = "Equal"
    DISJOINT = "Disjoint"


@dataclass(frozen=True)
class LoopRelation:
    kind: RelationKind
    a: int
    b: int


def body_relation(a: frozenset, b: frozenset) -> RelationKind:
    if a == b:
        return RelationKind.EQUAL
    if a < b:
        return RelationKind.SUBSET
    if a > b:
        return RelationKind.SUPERSET
    if a & b:
        return RelationKind.INTERSECT
    return RelationKind.DISJOINT


def loop_relation(a: Loop, b: Loop) -> LoopRelation:
    return LoopRelation(body_relation(a.body, b.body), a.id, b.id)


@dataclass(frozen=True)
class RelationGraph:
    """Loops as nodes; Subset edges point from the inner loop to the outer one.

    Intersect edges are undirected and stored once with ``a < b``.  Loops with
    identical bodies share one node, named after the smallest loop id; the
    others are listed in ``merged``.
    """

    loop_ids: tuple[int, ...]
    edges: tuple[tuple[int, int, RelationKind], ...]
    merged: dict[int, tuple[int, ...]] = field(default_factory=dict)

    def label(self, a: int, b: int) -> str | None:
        """Relation label between two nodes, viewed from ``a``."""
        for x, y, kind in self.edges:
            if kind is RelationKind.INTERSECT and {x, y} == {a, b}:
                return "Intersect"
            if kind is RelationKind.SUBSET:
                if (x, y) == (a, b):
                    return "Subset"
                if (x, y) == (b, a):
                    return "Superset"
        return None

    def to_dict(self) -> dict:
        return {
            "loop_ids": list(self.loop_ids),
            "edges": [{"a": a, "b": b, "kind": k.value} for a, b, k in self.edges],
            "merged": {str(k): list(v) for k, v in sorted(self.merged.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def relation_graph(loops: Sequence[Loop]) -> RelationGraph:
    groups: dict[frozenset, list[int]] = {}
    for loop in sorted(loops, key=lambda l: l.id):
        groups.setdefault(loop.body, []).append(loop.id)
    reps = sorted((ids[0], body) for body, ids in groups.items())
    merged = {ids[0]: tuple(ids[1:]) for ids in groups.values() if len(ids) > 1}

    edges = []
    for (ia, ba), (ib, bb) in combinations(reps, 2):
        kind = body_relation(ba, bb)
        if kind is RelationKind.SUBSET:
            edges.append((ia, ib, RelationKind.SUBSET))
        elif kind is RelationKind.SUPERSET:
            edges.append((ib, ia, RelationKind.SUBSET))
        elif kind is RelationKind.INTERSECT:
            edges.append((ia, ib, RelationKind.INTERSECT))
    edges.sort(key=lambda e: (e[0], e[1], e[2].value))
    return RelationGraph(tuple(r for r, _ in reps), tuple(edges), merged)


def loops_to_json(loops: Sequence[Loop], graph: RelationGraph | None = None) -> str:
    doc: dict = {"loops": [l.to_dict() for l in loops]}
    if graph is not None:
        doc["relation_graph"] = graph.to_dict()
    return json.dumps(doc, sort_keys=True, indent=2)
