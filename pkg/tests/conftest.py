from __future__ import annotations

import json

import pytest

from depscope.depgraph import DepGraph, Edge, Node, from_dict
from depscope.generator import GeneratorConfig, generate


def make_graph(edges, labels=None, durations=None, root="A", request_id="r", total=None,
               wait=50.0) -> DepGraph:
    """Small graph helper: ``edges`` is a list of (src, dst) or (src, dst, pct)."""
    ids = [root]
    for e in edges:
        for v in e[:2]:
            if v not in ids:
                ids.append(v)
    labels = labels or {}
    durations = durations or {}
    nodes = tuple(Node(i, labels.get(i, i), float(durations.get(i, 10.0))) for i in ids)
    es = tuple(Edge(e[0], e[1], float(e[2]) if len(e) > 2 else wait) for e in edges)
    tot = total if total is not None else float(durations.get(root, 10.0))
    return DepGraph(request_id, tot, root, nodes, es)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def doc(g: DepGraph) -> str:
    return json.dumps(g.to_dict())


@pytest.fixture(scope="session")
def default_dataset():
    return generate(GeneratorConfig(seed=42))


@pytest.fixture
def three_node_doc():
    return json.dumps({
        "request_id": "q1", "total_duration_ms": 100, "root": "A",
        "nodes": [{"id": "A", "label": "A", "duration_ms": 100},
                  {"id": "B", "label": "B", "duration_ms": 60},
                  {"id": "C", "label": "C", "duration_ms": 40}],
        "edges": [{"src": "A", "dst": "B", "wait_pct": 60},
                  {"src": "A", "dst": "C", "wait_pct": 40}],
    })


def roundtrip(g: DepGraph) -> DepGraph:
    return from_dict(json.loads(doc(g)))


def random_tree(rng, max_nodes=7, alphabet="abc", root_label="r", request_id="t") -> DepGraph:
    """Random small rooted tree; small alphabets make sibling label clashes common."""
    n = int(rng.integers(1, max_nodes + 1))
    nodes = [Node("v0", root_label, float(rng.integers(1, 500)))]
    edges = []
    for i in range(1, n):
        parent = int(rng.integers(0, i))
        nodes.append(Node(f"v{i}", str(rng.choice(list(alphabet))), float(rng.uniform(0, 300))))
        edges.append(Edge(f"v{parent}", f"v{i}", float(rng.uniform(0, 100))))
    return DepGraph(request_id, nodes[0].duration_ms, "v0", tuple(nodes), tuple(edges))
