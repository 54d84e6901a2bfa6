"""Outlier detectors over graph embeddings plus ground-truth scoring.

DBSCAN and OPTICS flag low-density points, k-NN flags points whose k-th
neighbor is far away, and the Z-score detector works on a scalar per graph
(response time by default).
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from typing import IO, Sequence

import numpy as np

from .depgraph import DepGraph

log = logging.getLogger(__name__)

NOISE = -1
METHODS = ("dbscan", "optics", "knn", "zscore")


class DetectionError(ValueError):
    pass


@dataclass(frozen=True)
class DetectionConfig:
    eps: float = 0.15
    min_pts: int = 10
    k: int = 5
    knn_threshold: float = 0.2
    z_threshold: float = 3.0
    zscore_feature: str = "duration"
    metric: str = "euclidean"

    def __post_init__(self) -> None:
        if not self.eps > 0:
            raise DetectionError("eps must be positive")
        if self.min_pts < 1 or self.k < 1:
            raise DetectionError("min_pts and k must be >= 1")
        if not self.knn_threshold > 0 or not self.z_threshold > 0:
            raise DetectionError("thresholds must be positive")
        if self.zscore_feature not in ("duration", "centroid_distance"):
            raise DetectionError(f"unknown zscore_feature {self.zscore_feature!r}")
        if self.metric != "euclidean":
            raise DetectionError("only the euclidean metric is supported")


@dataclass(frozen=True)
class DetectionResult:
    method: str
    outlier_flags: tuple[bool, ...]
    cluster_ids: tuple[int, ...] | None = None
    ordering: tuple[int, ...] | None = None
    reachability: tuple[float, ...] | None = None
    core_distances: tuple[float, ...] | None = None

    @property
    def n_outliers(self) -> int:
        return sum(self.outlier_flags)

    @property
    def n_clusters(self) -> int:
        if self.cluster_ids is None:
            return 0
        return max(self.cluster_ids, default=NOISE) + 1

    def cluster_members(self, cid: int) -> list[int]:
        return [i for i, c in enumerate(self.cluster_ids or ()) if c == cid]

    def largest_cluster(self) -> int | None:
        if not self.n_clusters:
            return None
        sizes = np.bincount([c for c in self.cluster_ids if c != NOISE],
                            minlength=self.n_clusters)
        return int(np.argmax(sizes))

    def write_csv(self, fp: IO[str], request_ids: Sequence[str]) -> None:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(["request_id", "method", "cluster_id", "is_outlier"])
        cids = self.cluster_ids or (None,) * len(self.outlier_flags)
        for rid, cid, flag in zip(request_ids, cids, self.outlier_flags):
            w.writerow([rid, self.method, "" if cid is None else cid, int(flag)])


def read_detections(fp: IO[str]) -> tuple[list[str], DetectionResult]:
    ids, flags, cids, method = [], [], [], None
    for row in csv.DictReader(fp):
        ids.append(row["request_id"])
        method = method or row["method"]
        flags.append(row["is_outlier"].strip() in ("1", "true", "True"))
        cids.append(int(row["cluster_id"]) if row["cluster_id"].strip() else None)
    has_clusters = bool(cids) and all(c is not None for c in cids)
    return ids, DetectionResult(method or "unknown", tuple(flags),
                                tuple(cids) if has_clusters else None)


def _as_points(points) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 1:
        raise DetectionError("points must be a non-empty 2-D array")
    return x


def distance_matrix(x: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix via the Gram identity (abs error ~1e-8 * scale)."""
    sq = np.einsum("ij,ij->i", x, x)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    # cancellation regime: recompute near-duplicate pairs from differences
    ii, jj = np.nonzero(d2 <= 1e-6 * (sq[:, None] + sq[None, :]))
    for start in range(0, len(ii), 100_000):
        a, b = ii[start:start + 100_000], jj[start:start + 100_000]
        diff = x[a] - x[b]
        d2[a, b] = np.einsum("ij,ij->i", diff, diff)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def dbscan(points, eps: float, min_pts: int) -> DetectionResult:
    """Classic DBSCAN; clusters are numbered in order of discovery by point index.

    A point's eps-neighborhood includes the point itself. A border point
    reachable from several clusters stays in the first one that reached it.
    """
    x = _as_points(points)
    n = x.shape[0]
    d = distance_matrix(x)
    neighbors = [np.flatnonzero(row <= eps) for row in d]
    core = np.array([len(nb) >= min_pts for nb in neighbors])
    labels = np.full(n, NOISE)
    cluster = 0
    for i in range(n):
        if labels[i] != NOISE or not core[i]:
            continue
        labels[i] = cluster
        queue = [i]
        head = 0
        while head < len(queue):
            p = queue[head]
            head += 1
            if not core[p]:
                continue
            for q in neighbors[p]:
                if labels[q] == NOISE:
                    labels[q] = cluster
                    queue.append(int(q))
        cluster += 1
    cids = tuple(int(c) for c in labels)
    return DetectionResult("dbscan", tuple(c == NOISE for c in cids), cids)


@dataclass(frozen=True)
class OpticsOrdering:
    ordering: tuple[int, ...]
    reachability: tuple[float, ...]
    core_distances: tuple[float, ...]


def optics_ordering(points, eps: float, min_pts: int) -> OpticsOrdering:
    """Cluster ordering with reachability and core distances (+inf if undefined).

    Ties in the seed queue resolve by point index. New expansions start from
    the lowest-index unprocessed core point; non-core leftovers come last.
    Starting from cores means every border point is reached through a core
    neighbor, so eps-extraction reproduces DBSCAN exactly.
    """
    x = _as_points(points)
    n = x.shape[0]
    d = distance_matrix(x)
    inf = math.inf
    core_dist = np.full(n, inf)
    neighbors = []
    for i in range(n):
        nb = np.flatnonzero(d[i] <= eps)
        neighbors.append(nb)
        if len(nb) >= min_pts:
            core_dist[i] = np.partition(d[i, nb], min_pts - 1)[min_pts - 1]
    reach = np.full(n, inf)
    processed = np.zeros(n, dtype=bool)
    order: list[int] = []

    def update(p: int) -> None:
        nb = neighbors[p]
        nb = nb[~processed[nb]]
        reach[nb] = np.minimum(reach[nb], np.maximum(core_dist[p], d[p, nb]))

    def expand(start: int) -> None:
        # the seed queue is every unprocessed point with finite reachability;
        # argmin picks the smallest, ties going to the lowest index
        processed[start] = True
        order.append(start)
        if not np.isfinite(core_dist[start]):
            return
        update(start)
        while True:
            masked = np.where(processed, inf, reach)
            q = int(np.argmin(masked))
            if not np.isfinite(masked[q]):
                return
            processed[q] = True
            order.append(q)
            if np.isfinite(core_dist[q]):
                update(q)

    for i in np.flatnonzero(np.isfinite(core_dist)):
        if not processed[i]:
            expand(int(i))
    for i in range(n):
        if not processed[i]:
            expand(i)
    return OpticsOrdering(tuple(order), tuple(float(r) for r in reach),
                          tuple(float(c) for c in core_dist))


def extract_dbscan(o: OpticsOrdering, eps: float) -> DetectionResult:
    """Read flat clusters off an OPTICS ordering at radius ``eps``."""
    n = len(o.ordering)
    labels = [NOISE] * n
    cluster = NOISE
    for p in o.ordering:
        if o.reachability[p] > eps:
            if o.core_distances[p] <= eps:
                cluster += 1
                labels[p] = cluster
        else:
            labels[p] = cluster
    return DetectionResult("optics", tuple(c == NOISE for c in labels), tuple(labels),
                           o.ordering, o.reachability, o.core_distances)


def optics(points, eps: float, min_pts: int) -> DetectionResult:
    return extract_dbscan(optics_ordering(points, eps, min_pts), eps)


def kth_neighbor_distances(points, k: int) -> np.ndarray:
    x = _as_points(points)
    n = x.shape[0]
    if n <= k:
        raise DetectionError(f"k-NN needs more than k={k} points, got {n}")
    d = distance_matrix(x)
    np.fill_diagonal(d, np.inf)
    return np.partition(d, k - 1, axis=1)[:, k - 1]


def knn_outliers(points, k: int, knn_threshold: float) -> DetectionResult:
    """Flag points whose k-th nearest neighbor (self excluded) is beyond the threshold."""
    kd = kth_neighbor_distances(points, k)
    return DetectionResult("knn", tuple(bool(v) for v in kd > knn_threshold))


def zscore_feature(graphs: Sequence[DepGraph] | None, embeddings, feature: str) -> np.ndarray:
    if feature == "duration":
        if graphs is None:
            raise DetectionError("duration Z-score needs the graphs")
        return np.array([g.total_duration_ms for g in graphs], dtype=np.float64)
    if feature == "centroid_distance":
        if embeddings is None:
            raise DetectionError("centroid_distance Z-score needs embeddings")
        x = _as_points(getattr(embeddings, "vectors", embeddings))
        return np.linalg.norm(x - x.mean(axis=0), axis=1)
    raise DetectionError(f"unknown zscore feature {feature!r}")


def zscores(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    sd = v.std()
    if sd == 0:
        return np.zeros_like(v)
    return (v - v.mean()) / sd


def zscore_outliers(graphs: Sequence[DepGraph] | None, embeddings=None,
                    config: DetectionConfig | None = None) -> DetectionResult:
    """Flag graphs whose scalar feature lies beyond ``z_threshold`` population SDs."""
    config = config or DetectionConfig()
    values = zscore_feature(graphs, embeddings, config.zscore_feature)
    if len(values) < 2:
        raise DetectionError("Z-score needs at least 2 samples")
    if len(values) <= 30:
        log.warning("Z-score on %d samples; results are unreliable below 31", len(values))
    z = zscores(values)
    return DetectionResult("zscore", tuple(bool(a) for a in np.abs(z) > config.z_threshold))


def run_method(method: str, points, graphs: Sequence[DepGraph] | None,
               config: DetectionConfig) -> DetectionResult:
    if method == "dbscan":
        return dbscan(points, config.eps, config.min_pts)
    if method == "optics":
        return optics(points, config.eps, config.min_pts)
    if method == "knn":
        return knn_outliers(points, config.k, config.knn_threshold)
    if method == "zscore":
        return zscore_outliers(graphs, points, config)
    raise DetectionError(f"unknown method {method!r}")


# --- ground truth and scoring ---

def ground_truth_labels(graphs: Sequence[DepGraph], threshold_ms: float = 200.0) -> list[bool]:
    return [g.total_duration_ms > threshold_ms for g in graphs]


@dataclass(frozen=True)
class EvalReport:
    n: int
    n_outliers_predicted: int
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict:
        return asdict(self)

    def write_json(self, fp: IO[str], method: str | None = None) -> None:
        doc = self.to_dict()
        if method:
            doc = {"method": method, **doc}
        json.dump(doc, fp, indent=2)
        fp.write("\n")


def evaluate(predicted: Sequence[bool], truth: Sequence[bool]) -> EvalReport:
    if len(predicted) != len(truth):
        raise DetectionError(f"length mismatch: {len(predicted)} predictions, {len(truth)} labels")
    if not predicted:
        raise DetectionError("cannot evaluate an empty prediction set")
    tp = fp = tn = fn = 0
    for p, t in zip(predicted, truth):
        if p and t:
            tp += 1
        elif p:
            fp += 1
        elif t:
            fn += 1
        else:
            tn += 1
    n = len(predicted)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return EvalReport(n, tp + fp, tp, fp, tn, fn, (tp + tn) / n, precision, recall, f1)
