"""Cluster merging and pairwise graph comparison for root-cause analysis.

Graphs are aligned by NodePath (root-to-node label chain). Merging folds a
cluster into per-path count/size/min/max statistics; comparing two merged
graphs marks paths seen on one side only and grades shared paths by how
far apart their relative counts are.
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass
from fractions import Fraction
from typing import IO, Iterable, Sequence, Union

from .depgraph import DepGraph, node_paths, parent_path

BOLD_BANDS = (0.5, 1.0, 2.0, 3.0)

BOTH, FIRST_ONLY, SECOND_ONLY = "both", "first_only", "second_only"
STYLE = {BOTH: "solid", FIRST_ONLY: "dashed", SECOND_ONLY: "dotted"}


class MergeError(ValueError):
    pass


@dataclass(frozen=True)
class MergedNodeStats:
    path: str
    count: int
    size_exact: Fraction
    min: float
    max: float

    @property
    def size(self) -> float:
        return float(self.size_exact)

    @property
    def mean(self) -> float:
        return float(self.size_exact / self.count)

    def combine(self, other: MergedNodeStats) -> MergedNodeStats:
        return MergedNodeStats(self.path, self.count + other.count,
                               self.size_exact + other.size_exact,
                               min(self.min, other.min), max(self.max, other.max))

    def to_dict(self) -> dict:
        return {"path": self.path, "count": self.count, "size": self.size,
                "min": self.min, "max": self.max}


@dataclass(frozen=True)
class MergedDepGraph:
    stats: dict[str, MergedNodeStats]
    n_graphs: int

    def paths(self) -> list[str]:
        return sorted(self.stats)

    def edges(self) -> list[tuple[str, str]]:
        out = []
        for p in self.paths():
            parent = parent_path(p)
            if parent is not None:
                out.append((parent, p))
        return out

    def combine(self, other: MergedDepGraph) -> MergedDepGraph:
        stats = dict(self.stats)
        for p, s in other.stats.items():
            stats[p] = stats[p].combine(s) if p in stats else s
        return MergedDepGraph(stats, self.n_graphs + other.n_graphs)

    def to_dict(self) -> dict:
        return {"n_graphs": self.n_graphs,
                "nodes": [self.stats[p].to_dict() for p in self.paths()]}

    def write_json(self, fp: IO[str]) -> None:
        json.dump(self.to_dict(), fp, indent=2)
        fp.write("\n")


def merged_from_dict(doc: dict) -> MergedDepGraph:
    try:
        stats = {}
        for n in doc["nodes"]:
            s = MergedNodeStats(str(n["path"]), int(n["count"]), Fraction(float(n["size"])),
                                float(n["min"]), float(n["max"]))
            if s.count < 1 or s.min > s.max:
                raise MergeError(f"inconsistent stats for path {s.path!r}")
            stats[s.path] = s
        merged = MergedDepGraph(stats, int(doc["n_graphs"]))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, MergeError):
            raise
        raise MergeError(f"malformed merged graph: {exc}") from exc
    for p in stats:
        parent = parent_path(p)
        if parent is not None and parent not in stats:
            raise MergeError(f"path {p!r} has no parent entry")
    return merged


def merge_cluster(graphs: Iterable[DepGraph]) -> MergedDepGraph:
    """Fold graphs into per-NodePath count, cumulative size, min and max."""
    count: dict[str, int] = {}
    size: dict[str, Fraction] = {}
    lo: dict[str, float] = {}
    hi: dict[str, float] = {}
    n_graphs = 0
    for g in graphs:
        n_graphs += 1
        paths = node_paths(g)
        for node in g.nodes:
            p = paths[node.id]
            dur = node.duration_ms
            if p not in count:
                count[p] = 1
                size[p] = Fraction(dur)
                lo[p] = hi[p] = dur
            else:
                count[p] += 1
                size[p] += Fraction(dur)
                if dur < lo[p]:
                    lo[p] = dur
                if dur > hi[p]:
                    hi[p] = dur
    if not n_graphs:
        raise MergeError("cannot merge an empty cluster")
    stats = {p: MergedNodeStats(p, count[p], size[p], lo[p], hi[p]) for p in count}
    return MergedDepGraph(stats, n_graphs)


def get_bold(z: float) -> int:
    """Map a standardized difference to an edge weight 1..5 (bands on |z|)."""
    a = abs(z)
    for level, bound in enumerate(BOLD_BANDS, start=1):
        if a < bound:
            return level
    return 5


@dataclass(frozen=True)
class DiffNode:
    path: str
    origin: str
    first: MergedNodeStats | None
    second: MergedNodeStats | None
    mean_first: float | None
    mean_second: float | None
    diff_mean: float | None
    mean_diff_sd: float | None
    boldness: int | None

    @property
    def style(self) -> str:
        return STYLE[self.origin]

    @property
    def merged(self) -> MergedNodeStats:
        if self.first and self.second:
            return self.first.combine(self.second)
        return self.first or self.second

    def to_dict(self) -> dict:
        doc = self.merged.to_dict()
        doc.update({
            "origin": self.origin,
            "style": self.style,
            "boldness": self.boldness,
            "count_first": self.first.count if self.first else 0,
            "count_second": self.second.count if self.second else 0,
            "diff_mean": self.diff_mean,
            "mean_diff_sd": _json_float(self.mean_diff_sd),
        })
        return doc


def _json_float(v):
    if v is None or math.isfinite(v):
        return v
    return "inf" if v > 0 else "-inf"


@dataclass(frozen=True)
class DiffGraph:
    nodes: dict[str, DiffNode]
    left_sd: float
    n_first: int
    n_second: int

    def paths(self) -> list[str]:
        return sorted(self.nodes)

    def edges(self) -> list[tuple[str, str]]:
        out = []
        for p in self.paths():
            parent = parent_path(p)
            if parent is not None:
                out.append((parent, p))
        return out

    def with_origin(self, origin: str) -> set[str]:
        return {p for p, n in self.nodes.items() if n.origin == origin}

    @property
    def dashed(self) -> set[str]:
        return self.with_origin(FIRST_ONLY)

    @property
    def dotted(self) -> set[str]:
        return self.with_origin(SECOND_ONLY)

    def to_dict(self) -> dict:
        return {
            "n_graphs_first": self.n_first,
            "n_graphs_second": self.n_second,
            "left_sd": self.left_sd,
            "bold_bands": list(BOLD_BANDS),
            "legend": {FIRST_ONLY: "dashed", SECOND_ONLY: "dotted", BOTH: "solid"},
            "nodes": [self.nodes[p].to_dict() for p in self.paths()],
        }

    def write_json(self, fp: IO[str]) -> None:
        json.dump(self.to_dict(), fp, indent=2)
        fp.write("\n")


Comparable = Union[DepGraph, MergedDepGraph]


def lift(g: Comparable) -> MergedDepGraph:
    return merge_cluster([g]) if isinstance(g, DepGraph) else g


def compare(first: Comparable, second: Comparable) -> DiffGraph:
    """Diff two (merged) graphs path by path.

    Shared paths get ``count_side / (count_first + count_second)`` on each
    side; their difference is scaled by the population SD of all first-side
    counts and banded into a boldness level. A zero SD sends non-zero
    differences to infinity.
    """
    a, b = lift(first), lift(second)
    tot = {p: s.count for p, s in a.stats.items()}
    for p, s in b.stats.items():
        tot[p] = tot.get(p, 0) + s.count
    means1 = {p: s.count / tot[p] for p, s in a.stats.items()}
    means2 = {p: s.count / tot[p] for p, s in b.stats.items()}
    left_sd = statistics.pstdev([s.count for s in a.stats.values()])

    nodes = {}
    for p in sorted(tot):
        sa, sb = a.stats.get(p), b.stats.get(p)
        if sa and sb:
            diff = means1[p] - means2[p]
            if left_sd > 0:
                z = diff / left_sd
            else:
                z = 0.0 if diff == 0 else math.copysign(math.inf, diff)
            nodes[p] = DiffNode(p, BOTH, sa, sb, means1[p], means2[p], diff, z, get_bold(z))
        elif sa:
            nodes[p] = DiffNode(p, FIRST_ONLY, sa, None, means1[p], None, None, None, None)
        else:
            nodes[p] = DiffNode(p, SECOND_ONLY, None, sb, None, means2[p], None, None, None)
    return DiffGraph(nodes, left_sd, a.n_graphs, b.n_graphs)


def load_comparable(doc: dict) -> Comparable:
    """Accept either a DepGraph document or a merged-graph document."""
    from .depgraph import from_dict

    if "n_graphs" in doc and "root" not in doc:
        return merged_from_dict(doc)
    return from_dict(doc)


def nearest_centroid_cluster(point, centroids: dict[int, Sequence[float]]) -> int:
    best, best_d = None, math.inf
    for cid in sorted(centroids):
        d = math.dist(point, centroids[cid])
        if d < best_d:
            best, best_d = cid, d
    return best
