"""End-to-end batch run: load, embed, detect, evaluate, explain outliers."""

from __future__ import annotations

import dataclasses
import io
import json
import logging
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .depgraph import DepGraph, load_depgraphs
from .detection import (METHODS, NOISE, DetectionConfig, DetectionError, DetectionResult, EvalReport,
                        dbscan, evaluate, extract_dbscan, ground_truth_labels, knn_outliers,
                        optics_ordering, zscore_outliers)
from .dot import render_diff, render_merged
from .embedding import EmbeddingConfig, EmbeddingError, EmbeddingMatrix, train_embeddings
from .generator import read_labels
from .rootcause import compare, lift, merge_cluster, nearest_centroid_cluster

log = logging.getLogger(__name__)

SEED_ENV = "DEPSCOPE_SEED"
PAIRINGS = ("largest", "nearest")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    input: str | None = None
    labels: str | None = None
    out_dir: str = "out"
    prune_threshold_pct: float | None = 3.0
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    methods: tuple[str, ...] = METHODS
    ground_truth_threshold_ms: float = 200.0
    seed: int = 0
    pairing: str = "largest"
    rootcause_method: str = "optics"

    def __post_init__(self) -> None:
        object.__setattr__(self, "methods", tuple(self.methods))
        if not self.methods:
            raise ConfigError("at least one detection method must be selected")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; choose from {list(METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("duplicate methods")
        if self.pairing not in PAIRINGS:
            raise ConfigError(f"pairing must be one of {PAIRINGS}")
        if self.rootcause_method not in ("dbscan", "optics"):
            raise ConfigError("rootcause_method must be dbscan or optics")
        if self.prune_threshold_pct is not None and not 0 <= self.prune_threshold_pct <= 100:
            raise ConfigError("prune_threshold_pct must be in [0, 100]")

    def embedding_config(self) -> EmbeddingConfig:
        return dataclasses.replace(self.embedding, seed=self.seed,
                                   prune_threshold_pct=self.prune_threshold_pct)


_SECTIONS = {"embedding": EmbeddingConfig, "detection": DetectionConfig}


def config_from_dict(doc: dict, overrides: dict | None = None) -> PipelineConfig:
    """Build a config from a JSON document; ``overrides`` (CLI flags) win.

    Overrides for nested sections use ``embedding.<field>`` /
    ``detection.<field>`` keys. The seed falls back to ``$DEPSCOPE_SEED``
    when neither source sets it.
    """
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    top = {f.name for f in dataclasses.fields(PipelineConfig)}
    merged: dict = {}
    nested: dict[str, dict] = {name: {} for name in _SECTIONS}
    for key, value in doc.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            nested[key].update(value)
        elif key in top:
            merged[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    for key, value in overrides.items():
        section, _, name = key.partition(".")
        if name:
            nested[section][name] = value
        else:
            merged[key] = value
    if "seed" not in merged and os.environ.get(SEED_ENV):
        try:
            merged["seed"] = int(os.environ[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer") from exc
    try:
        for name, cls in _SECTIONS.items():
            allowed = {f.name for f in dataclasses.fields(cls)}
            bad = set(nested[name]) - allowed
            if bad:
                raise ConfigError(f"unknown {name} keys {sorted(bad)}")
            merged[name] = cls(**nested[name])
        return PipelineConfig(**merged)
    except (TypeError, EmbeddingError, DetectionError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | None, overrides: dict | None = None) -> PipelineConfig:
    doc = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fp:
                doc = json.load(fp)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
    return config_from_dict(doc, overrides)


# --- timing ---

CLUSTER_STAGES = ("dbscan", "optics")
MERGE_STAGES = ("load", "merge", "construct")
COMPARE_STAGES = ("load", "merge", "compare", "construct")


@dataclass
class TimingReport:
    load: float = 0.0
    embed: float = 0.0
    cluster: dict[str, float] = field(default_factory=lambda: dict.fromkeys(CLUSTER_STAGES, 0.0))
    detect: dict[str, float] = field(default_factory=lambda: dict.fromkeys(METHODS, 0.0))
    merge: dict[str, float] = field(default_factory=lambda: dict.fromkeys(MERGE_STAGES, 0.0))
    compare: dict[str, float] = field(default_factory=lambda: dict.fromkeys(COMPARE_STAGES, 0.0))
    n_graphs: int = 0
    n_comparisons: int = 0

    def method_total(self, method: str) -> float:
        return self.cluster.get(method, 0.0) + self.detect[method]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def rows(self) -> list[tuple[str, str, float]]:
        rows = [("Data processing", "Load DepGraphs", self.load),
                ("Data processing", "DepGraph embeddings", self.embed)]
        rows += [("Cluster", m, self.cluster[m]) for m in CLUSTER_STAGES]
        rows += [("Outlier detection", m, self.detect[m]) for m in METHODS]
        names = {"load": "Load the cluster", "merge": "Merge DepGraphs in cluster",
                 "construct": "Construct merged graph"}
        rows += [("Merging clusters", names[s], self.merge[s]) for s in MERGE_STAGES]
        names = {"load": "Load the two DepGraphs", "merge": "Merge both executions",
                 "compare": "Compare the two DepGraphs", "construct": "Construct comparison graph"}
        rows += [("Compare outlier with cluster", names[s], self.compare[s])
                 for s in COMPARE_STAGES]
        return rows

    def table(self) -> str:
        lines = [f"{'Task':<30} {'Step':<30} {'Time (s)':>10}", "-" * 72]
        for group, step, secs in self.rows():
            lines.append(f"{group:<30} {step:<30} {secs:>10.3f}")
        return "\n".join(lines)


@contextmanager
def _timed(sink: dict | None, key: str, obj=None):
    t0 = time.perf_counter()
    try:
        yield
    finally:
        dt = time.perf_counter() - t0
        if obj is not None:
            setattr(obj, key, getattr(obj, key) + dt)
        else:
            sink[key] += dt


# --- stages ---

@dataclass
class PipelineResult:
    graphs: list[DepGraph]
    embeddings: EmbeddingMatrix
    detections: dict[str, DetectionResult]
    reports: dict[str, EvalReport]
    diffs: dict[str, object]
    timing: TimingReport
    out_dir: Path


def read_graphs(path: str) -> list[DepGraph]:
    with open(path, encoding="utf-8") as fp:
        return load_depgraphs(fp)


def detect_all(points: np.ndarray, graphs: Sequence[DepGraph], cfg: DetectionConfig,
               methods: Sequence[str], timing: TimingReport) -> dict[str, DetectionResult]:
    results = {}
    for m in methods:
        if m == "dbscan":
            with _timed(timing.cluster, "dbscan"):
                res = dbscan(points, cfg.eps, cfg.min_pts)
            with _timed(timing.detect, "dbscan"):
                res = dataclasses.replace(
                    res, outlier_flags=tuple(c == NOISE for c in res.cluster_ids))
        elif m == "optics":
            with _timed(timing.cluster, "optics"):
                order = optics_ordering(points, cfg.eps, cfg.min_pts)
            with _timed(timing.detect, "optics"):
                res = extract_dbscan(order, cfg.eps)
        elif m == "knn":
            with _timed(timing.detect, "knn"):
                res = knn_outliers(points, cfg.k, cfg.knn_threshold)
        else:
            with _timed(timing.detect, "zscore"):
                res = zscore_outliers(graphs, points, cfg)
        results[m] = res
    return results


def pick_cluster(res: DetectionResult, points: np.ndarray, index: int, pairing: str) -> int | None:
    if pairing == "largest":
        return res.largest_cluster()
    centroids = {c: points[res.cluster_members(c)].mean(axis=0) for c in range(res.n_clusters)}
    if not centroids:
        return None
    return nearest_centroid_cluster(points[index], centroids)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        fp.write(text)


def _json_text(doc) -> str:
    return json.dumps(doc, indent=2) + "\n"


def safe_name(request_id: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in request_id)


def run_pipeline(config: PipelineConfig, graphs: Sequence[DepGraph] | None = None) -> PipelineResult:
    """Run every stage and write artifacts under ``config.out_dir``.

    All artifacts except ``timing.json`` are deterministic for a fixed seed.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "FAILED").unlink(missing_ok=True)
    timing = TimingReport()

    with _timed(None, "load", timing):
        if graphs is None:
            if not config.input:
                raise ConfigError("no input graphs given")
            graphs = read_graphs(config.input)
        graphs = list(graphs)
    timing.n_graphs = len(graphs)
    ids = [g.request_id for g in graphs]

    with _timed(None, "embed", timing):
        emb = train_embeddings(graphs, config.embedding_config())
    buf = io.StringIO()
    emb.write_csv(buf)
    _write(out / "embeddings.csv", buf.getvalue())
    buf = io.StringIO()
    emb.write_header(buf)
    _write(out / "embeddings.json", buf.getvalue())
    points = emb.vectors

    detections = detect_all(points, graphs, config.detection, config.methods, timing)
    for m, res in detections.items():
        buf = io.StringIO()
        res.write_csv(buf, ids)
        _write(out / "detections" / f"{m}.csv", buf.getvalue())

    if config.labels:
        with open(config.labels, encoding="utf-8") as fp:
            by_id = read_labels(fp)
        missing = [rid for rid in ids if rid not in by_id]
        if missing:
            raise ConfigError(f"labels file lacks {len(missing)} request ids, e.g. {missing[0]}")
        truth, source = [by_id[rid] for rid in ids], "labels_file"
    else:
        truth = ground_truth_labels(graphs, config.ground_truth_threshold_ms)
        source = f"duration>{config.ground_truth_threshold_ms:g}ms"
    reports = {}
    for m, res in detections.items():
        rep = evaluate(res.outlier_flags, truth)
        reports[m] = rep
        _write(out / "eval" / f"{m}.json",
               _json_text({"method": m, "truth": source, **rep.to_dict()}))

    diffs = {}
    res = detections.get(config.rootcause_method)
    if res is None:
        log.warning("root-cause method %s not run; skipping diffs", config.rootcause_method)
    else:
        merged_cache, index = {}, []
        for i in (i for i, f in enumerate(res.outlier_flags) if f):
            with _timed(timing.merge, "load"):
                cid = pick_cluster(res, points, i, config.pairing)
                members = [graphs[j] for j in res.cluster_members(cid)] if cid is not None else []
            if not members:
                log.warning("no cluster to compare %s against", ids[i])
                continue
            if cid not in merged_cache:
                with _timed(timing.merge, "merge"):
                    merged = merge_cluster(members)
                with _timed(timing.merge, "construct"):
                    stem = out / "rootcause" / f"cluster{cid}"
                    _write(stem.with_suffix(".json"), _json_text(merged.to_dict()))
                    _write(stem.with_suffix(".dot"), render_merged(merged, name=f"cluster{cid}"))
                merged_cache[cid] = merged
            with _timed(timing.compare, "load"):
                outlier = graphs[i]
            with _timed(timing.compare, "merge"):
                single = lift(outlier)
            with _timed(timing.compare, "compare"):
                diff = compare(merged_cache[cid], single)
            with _timed(timing.compare, "construct"):
                stem = out / "rootcause" / f"{safe_name(ids[i])}.diff"
                _write(Path(str(stem) + ".json"), _json_text(diff.to_dict()))
                _write(Path(str(stem) + ".dot"),
                       render_diff(diff, name=f"cluster{cid} vs {ids[i]}"))
            index.append({"request_id": ids[i], "cluster": cid,
                          "diff": f"{safe_name(ids[i])}.diff.json"})
            diffs[ids[i]] = diff
            timing.n_comparisons += 1
        _write(out / "rootcause" / "index.json",
               _json_text({"method": config.rootcause_method, "pairing": config.pairing,
                           "outliers": index}))

    _write(out / "timing.json", _json_text(timing.to_dict()))
    return PipelineResult(graphs, emb, detections, reports, diffs, timing, out)
