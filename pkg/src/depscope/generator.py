"""Seeded synthetic DepGraph corpora with injected latency outliers.

Normal requests are drawn from a small catalog of Apache/PHP/MySQL request
shapes. Outliers get a slow response time plus at least one anomaly
decoration, a subtree whose labels never appear in a normal template.
A small share of fast requests carries a rare-but-benign structure; those
are correctly labeled normal and give structure-based detectors something
to trip over, as in real traces.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from .depgraph import DepGraph, Edge, Node, dump_depgraphs

GROUND_TRUTH_THRESHOLD_MS = 200.0
ROOT_LABEL = "thread apache2"

# A template is a tree: (label, [children]). Leaves are (label, []).
Tree = tuple

NORMAL_TEMPLATES: dict[str, tuple[float, Tree]] = {
    "db_query": (0.35, (ROOT_LABEL, [
        ("thread mysqld", [("disk", [])]),
        ("network", []),
        ("timer", []),
    ])),
    "db_cached": (0.30, (ROOT_LABEL, [
        ("thread mysqld", []),
        ("network", []),
    ])),
    "static_file": (0.20, (ROOT_LABEL, [
        ("syscall_read", [("disk", [])]),
        ("network", []),
    ])),
    "db_multi": (0.15, (ROOT_LABEL, [
        ("thread mysqld", [("disk", []), ("network", [])]),
        ("syscall_read", []),
        ("network", []),
        ("timer", []),
    ])),
}

# Benign structural rarities attached to otherwise normal requests.
RARE_DECORATIONS: dict[str, Tree] = {
    "cron_job": ("thread cron", [("disk", [])]),
    "page_fault": ("syscall_mmap", [("page fault", [])]),
    "log_rotate": ("thread logrotate", [("syscall_write", [])]),
}

# Small waits on futexes are below the 3% prune cutoff on purpose.
MINOR_LEAF = "syscall_futex"

ANOMALY_CATALOG = ("cpu_contention", "disk_write", "slow_database", "network_stall")

ANOMALY_LABELS = frozenset({
    "waitcpu", "thread Xorg",
    "syscall_ftruncate", "thread [kworker/7:1H]", "thread [lttng-consumerd]",
    "mysqld table lock",
    "tcp retransmit",
})


class GeneratorConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    n_requests: int = 697
    outlier_fraction: float = 15 / 697
    normal_duration_range_ms: tuple[float, float] = (60.0, 200.0)
    outlier_duration_range_ms: tuple[float, float] = (300.0, 800.0)
    seed: int = 0
    template_set: str = "apache_php"
    rare_fraction: float = 0.02
    minor_edge_probability: float = 0.5

    def __post_init__(self) -> None:
        object.__setattr__(self, "normal_duration_range_ms",
                           tuple(float(v) for v in self.normal_duration_range_ms))
        object.__setattr__(self, "outlier_duration_range_ms",
                           tuple(float(v) for v in self.outlier_duration_range_ms))
        self.validate()

    @property
    def n_outliers(self) -> int:
        return int(round(self.n_requests * self.outlier_fraction))

    def validate(self) -> None:
        if int(self.n_requests) != self.n_requests or self.n_requests < 1:
            raise GeneratorConfigError(f"n_requests must be a positive integer, got {self.n_requests}")
        if not 0 <= self.outlier_fraction < 1:
            raise GeneratorConfigError(f"outlier_fraction must be in [0, 1), got {self.outlier_fraction}")
        if not 0 <= self.rare_fraction < 1:
            raise GeneratorConfigError(f"rare_fraction must be in [0, 1), got {self.rare_fraction}")
        nlo, nhi = self.normal_duration_range_ms
        olo, ohi = self.outlier_duration_range_ms
        if not 0 < nlo < nhi:
            raise GeneratorConfigError(f"bad normal range {self.normal_duration_range_ms}")
        if not olo < ohi:
            raise GeneratorConfigError(f"bad outlier range {self.outlier_duration_range_ms}")
        if nhi > GROUND_TRUTH_THRESHOLD_MS:
            raise GeneratorConfigError("normal range must stay at or below 200 ms")
        if olo <= GROUND_TRUTH_THRESHOLD_MS:
            raise GeneratorConfigError("outlier range lower bound must exceed 200 ms")
        if self.seed < 0:
            raise GeneratorConfigError("seed must be non-negative")
        if self.template_set != "apache_php":
            raise GeneratorConfigError(f"unknown template_set {self.template_set!r}")


@dataclass
class LabeledDataset:
    graphs: list[DepGraph]
    labels: list[bool]
    causes: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.graphs) != len(self.labels):
            raise ValueError("graphs and labels differ in length")

    def write(self, graphs_fp: IO[str], labels_fp: IO[str]) -> None:
        dump_depgraphs(self.graphs, graphs_fp)
        write_labels(labels_fp, [g.request_id for g in self.graphs], self.labels)


def write_labels(fp: IO[str], request_ids: Sequence[str], labels: Sequence[bool]) -> None:
    w = csv.writer(fp, lineterminator="\n")
    w.writerow(["request_id", "is_outlier"])
    for rid, lab in zip(request_ids, labels):
        w.writerow([rid, int(bool(lab))])


def read_labels(fp: IO[str]) -> dict[str, bool]:
    out = {}
    for row in csv.DictReader(fp):
        out[row["request_id"]] = row["is_outlier"].strip().lower() in ("1", "true", "yes")
    return out


def _truncated_lognormal(rng: np.random.Generator, low: float, high: float) -> float:
    # right-skewed: mode sits in the lower third of the log range
    llo, lhi = math.log(low), math.log(high)
    mu = llo + 0.3 * (lhi - llo)
    sigma = 0.3 * (lhi - llo)
    while True:
        x = math.exp(rng.normal(mu, sigma))
        if low < x < high:
            return x


def _mutable(tree: Tree) -> list:
    label, kids = tree
    return [label, [_mutable(k) for k in kids], None]


class _Builder:
    def __init__(self, request_id: str) -> None:
        self.request_id = request_id
        self.nodes: list[Node] = []
        self.edges: list[Edge] = []

    def add(self, label: str, duration: float) -> str:
        nid = f"n{len(self.nodes)}"
        self.nodes.append(Node(nid, label, round(duration, 3)))
        return nid

    def expand(self, rng, nid: str, dur: float, kids: list) -> None:
        """Attach ``kids`` under ``nid``; entries are ``[label, kids, fixed_pct]``."""
        if not kids:
            return
        budget = float(rng.uniform(70, 95))
        fixed = sum(k[2] for k in kids if k[2] is not None)
        free = [k for k in kids if k[2] is None]
        free_budget = max(budget - fixed, 6.0 * len(free))
        shares = iter(rng.dirichlet(np.full(len(free), 4.0)) * free_budget) if free else iter(())
        for label, grandkids, pct in kids:
            pct = pct if pct is not None else max(float(next(shares)), 4.0)
            child_ms = dur * pct / 100
            cid = self.add(label, child_ms)
            self.edges.append(Edge(nid, cid, round(pct, 3)))
            self.expand(rng, cid, child_ms, grandkids)


def _child(kids: list, label: str) -> list:
    for k in kids:
        if k[0] == label:
            return k
    k = [label, [], None]
    kids.append(k)
    return k


def _decorate(rng, kids: list, cause: str, share: float) -> None:
    if cause == "cpu_contention":
        kids.append(["waitcpu", [["thread Xorg", [], None]], share])
    elif cause == "disk_write":
        kids.append(["syscall_ftruncate", [
            ["disk", [], None],
            ["thread [kworker/7:1H]", [], None],
            ["thread [lttng-consumerd]", [], None],
        ], share])
    elif cause in ("slow_database", "network_stall"):
        host, extra = (("thread mysqld", "mysqld table lock") if cause == "slow_database"
                       else ("network", "tcp retransmit"))
        node = _child(kids, host)
        node[2] = share
        node[1].append([extra, [], float(rng.uniform(40, 80))])
    else:
        raise ValueError(f"unknown anomaly {cause!r}")


def _make_graph(cfg: GeneratorConfig, index: int, outlier: bool) -> tuple[DepGraph, list[str]]:
    rng = np.random.default_rng([cfg.seed, index])
    names = list(NORMAL_TEMPLATES)
    weights = np.array([NORMAL_TEMPLATES[n][0] for n in names])
    template = NORMAL_TEMPLATES[names[rng.choice(len(names), p=weights / weights.sum())]][1]
    kids = _mutable(template)[1]

    lo_hi = cfg.outlier_duration_range_ms if outlier else cfg.normal_duration_range_ms
    total = round(_truncated_lognormal(rng, *lo_hi), 3)

    causes: list[str] = []
    if outlier:
        n_causes = 1 if rng.random() < 0.75 else 2
        causes = [ANOMALY_CATALOG[i] for i in
                  sorted(rng.choice(len(ANOMALY_CATALOG), size=n_causes, replace=False))]
        # the anomalies eat most of the wall time
        for cause in causes:
            _decorate(rng, kids, cause, float(rng.uniform(50, 70)) / n_causes)
    elif rng.random() < cfg.rare_fraction:
        rare = list(RARE_DECORATIONS)[rng.integers(len(RARE_DECORATIONS))]
        node = _mutable(RARE_DECORATIONS[rare])
        node[2] = float(rng.uniform(10, 25))
        kids.append(node)
    if rng.random() < cfg.minor_edge_probability:
        kids.append([MINOR_LEAF, [], float(rng.uniform(0.2, 2.9))])

    b = _Builder(f"req-{index:04d}")
    root = b.add(ROOT_LABEL, total)
    b.expand(rng, root, total, kids)
    g = DepGraph(request_id=b.request_id, total_duration_ms=total, root=root,
                 nodes=tuple(b.nodes), edges=tuple(b.edges))
    return g, causes


def generate(config: GeneratorConfig) -> LabeledDataset:
    """Build ``config.n_requests`` graphs; identical configs give identical output."""
    config.validate()
    n, k = config.n_requests, config.n_outliers
    order = np.random.default_rng([config.seed, n, k]).permutation(n)
    outlier_idx = set(int(i) for i in order[:k])
    graphs, labels, causes = [], [], {}
    for i in range(n):
        g, why = _make_graph(config, i, i in outlier_idx)
        graphs.append(g)
        labels.append(g.total_duration_ms > GROUND_TRUTH_THRESHOLD_MS)
        if why:
            causes[g.request_id] = why
    return LabeledDataset(graphs, labels, causes)


def normal_template_labels() -> set[str]:
    labels = {MINOR_LEAF}

    def walk(tree):
        labels.add(tree[0])
        for kid in tree[1]:
            walk(kid)

    for _, tree in NORMAL_TEMPLATES.values():
        walk(tree)
    for tree in RARE_DECORATIONS.values():
        walk(tree)
    return labels
