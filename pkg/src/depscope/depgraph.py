"""Waiting-dependency graph model, JSON I/O, pruning and path keys.

A DepGraph describes one request: nodes are threads, system calls or wait
states with an aggregated duration, and an edge ``src -> dst`` carries the
percentage of ``src``'s time spent waiting on ``dst``.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Mapping

DEFAULT_PRUNE_THRESHOLD_PCT = 3.0

_GRAPH_KEYS = {"request_id", "total_duration_ms", "root", "nodes", "edges"}
_NODE_KEYS = {"id", "label", "duration_ms"}
_EDGE_KEYS = {"src", "dst", "wait_pct"}


class DepGraphError(ValueError):
    """Base class for malformed DepGraph input."""


class ParseError(DepGraphError):
    pass


class ValidationError(DepGraphError):
    pass


@dataclass(frozen=True)
class Node:
    id: str
    label: str
    duration_ms: float


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    wait_pct: float


@dataclass(frozen=True)
class DepGraph:
    """Validated, immutable request graph.

    Construction runs :func:`validate`, so every instance is a rooted DAG
    whose nodes are all reachable from ``root``.
    """

    request_id: str
    total_duration_ms: float
    root: str
    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]
    _index: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "_index", {n.id: n for n in self.nodes})
        validate(self)

    def node(self, node_id: str) -> Node:
        return self._index[node_id]

    def children(self, node_id: str) -> list[str]:
        return [e.dst for e in self.edges if e.src == node_id]

    def to_dict(self) -> dict:
        return {
            "request_id": self.request_id,
            "total_duration_ms": self.total_duration_ms,
            "root": self.root,
            "nodes": [
                {"id": n.id, "label": n.label, "duration_ms": n.duration_ms}
                for n in self.nodes
            ],
            "edges": [
                {"src": e.src, "dst": e.dst, "wait_pct": e.wait_pct}
                for e in self.edges
            ],
        }


def validate(g: DepGraph) -> None:
    """Raise :class:`ValidationError` naming the first broken invariant."""
    if g.total_duration_ms < 0:
        raise ValidationError(
            f"{g.request_id}: negative total_duration_ms {g.total_duration_ms}"
        )
    ids: set[str] = set()
    for n in g.nodes:
        if n.id in ids:
            raise ValidationError(f"{g.request_id}: duplicate node id {n.id!r}")
        ids.add(n.id)
        if not n.label:
            raise ValidationError(f"{g.request_id}: node {n.id!r} has an empty label")
        if not n.duration_ms >= 0:
            raise ValidationError(
                f"{g.request_id}: node {n.id!r} has negative duration {n.duration_ms}"
            )
    if g.root not in ids:
        raise ValidationError(f"{g.request_id}: root {g.root!r} is not a node")

    out: dict[str, list[str]] = {i: [] for i in ids}
    indeg = {i: 0 for i in ids}
    seen_edges: set[tuple[str, str]] = set()
    for e in g.edges:
        name = f"{e.src}->{e.dst}"
        for end in (e.src, e.dst):
            if end not in ids:
                raise ValidationError(
                    f"{g.request_id}: edge {name} references unknown node {end!r}"
                )
        if e.src == e.dst:
            raise ValidationError(f"{g.request_id}: self-loop on node {e.src!r}")
        if not 0 <= e.wait_pct <= 100:
            raise ValidationError(
                f"{g.request_id}: edge {name} wait_pct {e.wait_pct} outside [0, 100]"
            )
        if (e.src, e.dst) in seen_edges:
            raise ValidationError(f"{g.request_id}: duplicate edge {name}")
        seen_edges.add((e.src, e.dst))
        out[e.src].append(e.dst)
        indeg[e.dst] += 1

    cycle = _find_cycle(out, [n.id for n in g.nodes])
    if cycle:
        raise ValidationError(f"{g.request_id}: cycle {' -> '.join(cycle)}")

    reached = {g.root}
    stack = [g.root]
    while stack:
        for dst in out[stack.pop()]:
            if dst not in reached:
                reached.add(dst)
                stack.append(dst)
    for n in g.nodes:
        if n.id in reached:
            continue
        if indeg[n.id] == 0 and out[n.id]:
            raise ValidationError(
                f"{g.request_id}: multiple roots ({g.root!r} and {n.id!r})"
            )
        raise ValidationError(f"{g.request_id}: unreachable node {n.id}")


def _find_cycle(out: Mapping[str, list[str]], order: list[str]) -> list[str] | None:
    WHITE, GREY, BLACK = 0, 1, 2
    color = dict.fromkeys(order, WHITE)
    for start in order:
        if color[start] != WHITE:
            continue
        color[start] = GREY
        path = [start]
        iters = [iter(out[start])]
        while iters:
            nxt = next(iters[-1], None)
            if nxt is None:
                color[path.pop()] = BLACK
                iters.pop()
            elif color[nxt] == GREY:
                return path[path.index(nxt):] + [nxt]
            elif color[nxt] == WHITE:
                color[nxt] = GREY
                path.append(nxt)
                iters.append(iter(out[nxt]))
    return None


# --- JSON ---

def _num(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _str(value, where: str) -> str:
    if not isinstance(value, str):
        raise ParseError(f"{where}: expected a string, got {value!r}")
    return value


def _check_keys(obj, required: set[str], where: str, strict: bool) -> None:
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected an object")
    missing = required - obj.keys()
    if missing:
        raise ParseError(f"{where}: missing keys {sorted(missing)}")
    extra = obj.keys() - required
    if strict and extra:
        raise ParseError(f"{where}: unknown keys {sorted(extra)}")


def from_dict(doc: dict, strict: bool = False) -> DepGraph:
    _check_keys(doc, _GRAPH_KEYS, "graph", strict)
    rid = _str(doc["request_id"], "request_id")
    if not isinstance(doc["nodes"], list) or not isinstance(doc["edges"], list):
        raise ParseError(f"{rid}: nodes and edges must be arrays")
    nodes = []
    for i, n in enumerate(doc["nodes"]):
        where = f"{rid}: nodes[{i}]"
        _check_keys(n, _NODE_KEYS, where, strict)
        nodes.append(Node(_str(n["id"], where + ".id"), _str(n["label"], where + ".label"),
                          _num(n["duration_ms"], where + ".duration_ms")))
    edges = []
    for i, e in enumerate(doc["edges"]):
        where = f"{rid}: edges[{i}]"
        _check_keys(e, _EDGE_KEYS, where, strict)
        edges.append(Edge(_str(e["src"], where + ".src"), _str(e["dst"], where + ".dst"),
                          _num(e["wait_pct"], where + ".wait_pct")))
    return DepGraph(
        request_id=rid,
        total_duration_ms=_num(doc["total_duration_ms"], f"{rid}: total_duration_ms"),
        root=_str(doc["root"], f"{rid}: root"),
        nodes=tuple(nodes),
        edges=tuple(edges),
    )


def _read_text(source) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, str):
        return source
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def load_depgraph(source: str | bytes | IO, strict: bool = False) -> DepGraph:
    """Parse and validate a single DepGraph JSON document."""
    text = _read_text(source)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc}") from exc
    return from_dict(doc, strict=strict)


def iter_depgraphs(source: str | bytes | IO, strict: bool = False) -> Iterator[DepGraph]:
    """Yield graphs from either one JSON document or newline-delimited JSON."""
    text = _read_text(source)
    stripped = text.strip()
    if not stripped:
        return
    try:
        doc = json.loads(stripped)
    except json.JSONDecodeError:
        doc = None
    if isinstance(doc, dict):
        yield from_dict(doc, strict=strict)
        return
    if isinstance(doc, list):
        for item in doc:
            yield from_dict(item, strict=strict)
        return
    for lineno, line in enumerate(io.StringIO(text), 1):
        if not line.strip():
            continue
        try:
            item = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {lineno}: malformed JSON: {exc}") from exc
        yield from_dict(item, strict=strict)


def load_depgraphs(source, strict: bool = False) -> list[DepGraph]:
    return list(iter_depgraphs(source, strict=strict))


def dumps(g: DepGraph) -> str:
    return json.dumps(g.to_dict(), separators=(",", ":"))


def dump_depgraphs(graphs: Iterable[DepGraph], fp: IO[str]) -> None:
    for g in graphs:
        fp.write(dumps(g))
        fp.write("\n")


# --- transforms ---

def prune_edges(g: DepGraph, threshold_pct: float = DEFAULT_PRUNE_THRESHOLD_PCT) -> DepGraph:
    """Drop edges below ``threshold_pct`` and every node no longer reachable."""
    if not 0 <= threshold_pct <= 100:
        raise ValueError(f"threshold_pct must be in [0, 100], got {threshold_pct}")
    kept = [e for e in g.edges if e.wait_pct >= threshold_pct]
    if len(kept) == len(g.edges):
        return g
    out: dict[str, list[str]] = {}
    for e in kept:
        out.setdefault(e.src, []).append(e.dst)
    reached = {g.root}
    stack = [g.root]
    while stack:
        for dst in out.get(stack.pop(), ()):
            if dst not in reached:
                reached.add(dst)
                stack.append(dst)
    return DepGraph(
        request_id=g.request_id,
        total_duration_ms=g.total_duration_ms,
        root=g.root,
        nodes=tuple(n for n in g.nodes if n.id in reached),
        edges=tuple(e for e in kept if e.src in reached),
    )


@dataclass(frozen=True)
class UndirectedGraph:
    """Node-labeled simple undirected graph; edges are unordered id pairs."""

    labels: dict[str, str]
    edges: frozenset[frozenset[str]]

    def neighbors(self) -> dict[str, list[str]]:
        adj: dict[str, list[str]] = {v: [] for v in self.labels}
        for pair in self.edges:
            a, b = tuple(pair)
            adj[a].append(b)
            adj[b].append(a)
        return adj


def to_undirected(g: DepGraph, label_fn=None) -> UndirectedGraph:
    """Forget edge direction and weights; antiparallel pairs collapse."""
    label_fn = label_fn or (lambda n: n.label)
    return UndirectedGraph(
        labels={n.id: label_fn(n) for n in g.nodes},
        edges=frozenset(frozenset((e.src, e.dst)) for e in g.edges),
    )


# --- node paths ---

PATH_SEP = "/"


def escape_label(label: str) -> str:
    return label.replace("\\", "\\\\").replace("/", "\\/")


def format_path(segments: Iterable[str]) -> str:
    return PATH_SEP.join(escape_label(s) for s in segments)


def parse_path(path: str) -> tuple[str, ...]:
    segments: list[str] = []
    buf: list[str] = []
    chars = iter(path)
    for ch in chars:
        if ch == "\\":
            buf.append(next(chars, "\\"))
        elif ch == PATH_SEP:
            segments.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
    segments.append("".join(buf))
    return tuple(segments)


def parent_path(path: str) -> str | None:
    segments = parse_path(path)
    if len(segments) == 1:
        return None
    return format_path(segments[:-1])


def path_label(path: str) -> str:
    return parse_path(path)[-1]


def _sibling_segments(g: DepGraph) -> dict[tuple[str, str], str]:
    # (parent, child) -> label, suffixed "#k" among same-label siblings in node order
    order = {n.id: i for i, n in enumerate(g.nodes)}
    segs: dict[tuple[str, str], str] = {}
    by_parent: dict[str, list[str]] = {}
    for e in g.edges:
        by_parent.setdefault(e.src, []).append(e.dst)
    for parent, kids in by_parent.items():
        seen: dict[str, int] = {}
        for kid in sorted(kids, key=order.__getitem__):
            label = g.node(kid).label
            seen[label] = seen.get(label, 0) + 1
            segs[parent, kid] = label if seen[label] == 1 else f"{label}#{seen[label]}"
    return segs


def node_path_segments(g: DepGraph) -> dict[str, tuple[str, ...]]:
    """Root-to-node label sequence per node id.

    Nodes with several parents take the lexicographically smallest candidate
    path; same-label siblings are suffixed ``#2``, ``#3``... in node order.
    """
    segs = _sibling_segments(g)
    parents: dict[str, list[str]] = {}
    for e in g.edges:
        parents.setdefault(e.dst, []).append(e.src)
    paths: dict[str, tuple[str, ...]] = {g.root: (g.node(g.root).label,)}

    def resolve(node_id: str) -> tuple[str, ...]:
        # iterative post-order; depth of real DepGraphs is small but stay safe
        stack = [node_id]
        while stack:
            cur = stack[-1]
            if cur in paths:
                stack.pop()
                continue
            todo = [p for p in parents[cur] if p not in paths]
            if todo:
                stack.extend(todo)
                continue
            paths[cur] = min(paths[p] + (segs[p, cur],) for p in parents[cur])
            stack.pop()
        return paths[node_id]

    for n in g.nodes:
        resolve(n.id)
    return paths


def node_paths(g: DepGraph) -> dict[str, str]:
    """Serialized NodePath per node id (``/``-joined, ``/`` in labels escaped)."""
    return {nid: format_path(segs) for nid, segs in node_path_segments(g).items()}
