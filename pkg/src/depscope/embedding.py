"""Whole-graph embeddings from Weisfeiler-Lehman subtree features.

Each graph is treated as a document whose words are its WL features; a
graph vector is trained to predict its own features against negatively
sampled ones (distributed bag of words with negative sampling).
"""

from __future__ import annotations

import csv
import hashlib
import json
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import IO, Sequence

import numpy as np

from .depgraph import DepGraph, Node, UndirectedGraph, prune_edges, to_undirected

_BUCKETS = ((1.0, "<1"), (10.0, "<10"), (100.0, "<100"), (1000.0, "<1000"))


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingConfig:
    dimensions: int = 64
    wl_iterations: int = 2
    epochs: int = 50
    learning_rate: float = 0.025
    min_learning_rate: float = 0.0001
    negative_samples: int = 5
    min_feature_count: int = 1
    seed: int = 0
    prune_threshold_pct: float | None = 3.0
    duration_buckets: bool = False
    workers: int = 1

    def __post_init__(self) -> None:
        if self.dimensions < 1 or self.epochs < 1 or self.negative_samples < 1:
            raise EmbeddingError("dimensions, epochs and negative_samples must be positive")
        if self.wl_iterations < 0 or self.min_feature_count < 0:
            raise EmbeddingError("wl_iterations and min_feature_count must be non-negative")
        if not self.learning_rate > 0 or self.min_learning_rate < 0:
            raise EmbeddingError("learning_rate must be positive")
        if self.workers < 1:
            raise EmbeddingError("workers must be >= 1")


def duration_bucket(duration_ms: float) -> str:
    for bound, name in _BUCKETS:
        if duration_ms < bound:
            return name
    return ">=1000"


def _bucketed_label(node: Node) -> str:
    return f"{node.label}@{duration_bucket(node.duration_ms)}"


@dataclass(frozen=True)
class WLFeatureSet:
    """Per-iteration feature multisets, each stored as a sorted tuple."""

    iterations: tuple[tuple[str, ...], ...]

    def features(self) -> list[str]:
        return [f for it in self.iterations for f in it]

    def counter(self) -> Counter:
        return Counter(self.features())


def wl_hash(own: str, neighbors: Sequence[str]) -> str:
    canonical = json.dumps([own, sorted(neighbors)], ensure_ascii=False, separators=(",", ":"))
    return hashlib.blake2b(canonical.encode("utf-8"), digest_size=8).hexdigest()


def wl_relabel(g: UndirectedGraph, iterations: int) -> WLFeatureSet:
    """Run ``iterations`` rounds of WL refinement, keeping every round's labels."""
    if iterations < 0:
        raise ValueError("iterations must be non-negative")
    adj = g.neighbors()
    labels = dict(g.labels)
    rounds = [tuple(sorted(labels.values()))]
    for _ in range(iterations):
        labels = {v: wl_hash(labels[v], [labels[u] for u in adj[v]]) for v in labels}
        rounds.append(tuple(sorted(labels.values())))
    return WLFeatureSet(tuple(rounds))


def graph_features(g: DepGraph, config: EmbeddingConfig) -> WLFeatureSet:
    if config.prune_threshold_pct is not None:
        g = prune_edges(g, config.prune_threshold_pct)
    label_fn = _bucketed_label if config.duration_buckets else None
    return wl_relabel(to_undirected(g, label_fn), config.wl_iterations)


@dataclass
class EmbeddingMatrix:
    request_ids: list[str]
    vectors: np.ndarray
    config: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    vocabulary_size: int = 0

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.request_ids):
            raise EmbeddingError("vectors must be (n_graphs, dimensions)")

    @property
    def shape(self) -> tuple[int, int]:
        return self.vectors.shape

    def header(self) -> dict:
        return {"config": asdict(self.config), "vocabulary_size": self.vocabulary_size,
                "n_graphs": len(self.request_ids), "dimensions": self.vectors.shape[1]}

    def write_csv(self, fp: IO[str]) -> None:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(["request_id"] + [f"v{i}" for i in range(self.vectors.shape[1])])
        for rid, row in zip(self.request_ids, self.vectors):
            w.writerow([rid] + [repr(float(x)) for x in row])

    def write_header(self, fp: IO[str]) -> None:
        json.dump(self.header(), fp, indent=2, sort_keys=True)
        fp.write("\n")


def read_embeddings(csv_fp: IO[str], header_fp: IO[str] | None = None) -> EmbeddingMatrix:
    rows = list(csv.reader(csv_fp))
    if not rows or rows[0][:1] != ["request_id"]:
        raise EmbeddingError("embedding CSV must start with a request_id header")
    ids = [r[0] for r in rows[1:]]
    vecs = np.array([[float(x) for x in r[1:]] for r in rows[1:]], dtype=np.float64)
    if not ids:
        vecs = vecs.reshape(0, len(rows[0]) - 1)
    config, vocab = EmbeddingConfig(), 0
    if header_fp is not None:
        head = json.load(header_fp)
        config = EmbeddingConfig(**head["config"])
        vocab = int(head["vocabulary_size"])
    return EmbeddingMatrix(ids, vecs, config, vocab)


class _Trainer:
    """Negative-sampling DBOW trainer over integer-encoded documents."""

    def __init__(self, docs: list[np.ndarray], vocab_counts: np.ndarray, cfg: EmbeddingConfig):
        self.docs = docs
        self.cfg = cfg
        dim = cfg.dimensions
        init = np.random.default_rng([cfg.seed, 0])
        self.doc_vecs = (init.random((len(docs), dim)) - 0.5) / dim
        self.out_vecs = np.zeros((len(vocab_counts), dim))
        weights = vocab_counts.astype(np.float64) ** 0.75
        self.cum = np.cumsum(weights / weights.sum())
        self.cum[-1] = 1.0
        self.total_steps = cfg.epochs * len(docs)

    def _alpha(self, step: int) -> float:
        cfg = self.cfg
        frac = step / self.total_steps
        return max(cfg.min_learning_rate,
                   cfg.learning_rate - (cfg.learning_rate - cfg.min_learning_rate) * frac)

    def _train_doc(self, rng: np.random.Generator, di: int, alpha: float) -> None:
        words = self.docs[di]
        neg = self.cfg.negative_samples
        noise = np.searchsorted(self.cum, rng.random((len(words), neg)), side="right")
        targets = np.concatenate([words[:, None], noise], axis=1)
        labels = np.zeros(targets.shape)
        labels[:, 0] = 1.0
        d = self.doc_vecs[di]
        out = self.out_vecs[targets]
        score = out @ d
        sig = 1.0 / (1.0 + np.exp(-np.clip(score, -30.0, 30.0)))
        grad = (labels - sig) * alpha
        # a negative draw that hits the positive word is skipped
        grad[:, 1:][noise == words[:, None]] = 0.0
        doc_update = np.einsum("ij,ijk->k", grad, out)
        np.add.at(self.out_vecs, targets.ravel(), grad.ravel()[:, None] * d[None, :])
        self.doc_vecs[di] += doc_update

    def run(self) -> np.ndarray:
        cfg = self.cfg
        n = len(self.docs)
        if cfg.workers == 1:
            rng = np.random.default_rng([cfg.seed, 1])
            step = 0
            for _ in range(cfg.epochs):
                for di in rng.permutation(n):
                    self._train_doc(rng, int(di), self._alpha(step))
                    step += 1
            return self.doc_vecs

        counter = [0]
        lock = threading.Lock()
        seeds = np.random.SeedSequence([cfg.seed, 1]).spawn(cfg.workers)
        rngs = [np.random.default_rng(s) for s in seeds]
        order_rng = np.random.default_rng([cfg.seed, 2])

        def work(rng, chunk):
            for di in chunk:
                with lock:
                    step = counter[0]
                    counter[0] += 1
                self._train_doc(rng, int(di), self._alpha(step))

        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            for _ in range(cfg.epochs):
                chunks = np.array_split(order_rng.permutation(n), cfg.workers)
                list(pool.map(work, rngs, chunks))
        return self.doc_vecs


def build_vocabulary(feature_sets: Sequence[WLFeatureSet], min_count: int) -> dict[str, int]:
    counts = Counter()
    for fs in feature_sets:
        counts.update(fs.features())
    kept = sorted(f for f, c in counts.items() if c >= min_count)
    return {f: i for i, f in enumerate(kept)}


def train_embeddings(graphs: Sequence[DepGraph], config: EmbeddingConfig | None = None) -> EmbeddingMatrix:
    """Embed every graph; with ``workers=1`` the result is bitwise reproducible."""
    config = config or EmbeddingConfig()
    if len(graphs) < 2:
        raise EmbeddingError(f"need at least 2 graphs to train, got {len(graphs)}")
    feature_sets = [graph_features(g, config) for g in graphs]
    vocab = build_vocabulary(feature_sets, config.min_feature_count)
    if not vocab:
        raise EmbeddingError("empty vocabulary after min_feature_count filtering")
    docs = []
    counts = np.zeros(len(vocab), dtype=np.int64)
    for fs in feature_sets:
        ids = np.array([vocab[f] for f in fs.features() if f in vocab], dtype=np.int64)
        np.add.at(counts, ids, 1)
        docs.append(ids)
    vectors = _Trainer(docs, counts, config).run()
    if not np.all(np.isfinite(vectors)):
        raise EmbeddingError("training diverged (non-finite vectors)")
    return EmbeddingMatrix([g.request_id for g in graphs], vectors.copy(), config, len(vocab))


@dataclass(frozen=True)
class Projection:
    points: np.ndarray
    degenerate: bool


def project_2d(m: EmbeddingMatrix | np.ndarray, atol: float = 1e-12) -> Projection:
    """Project rows onto their top two principal directions.

    Each direction's sign is fixed so its first non-negligible coordinate is
    positive. All-equal rows give zeros with ``degenerate=True``.
    """
    x = np.asarray(m.vectors if isinstance(m, EmbeddingMatrix) else m, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise EmbeddingError("project_2d needs at least 2 rows")
    centered = x - x.mean(axis=0)
    scale = np.abs(centered).max()
    if scale <= atol * max(1.0, np.abs(x).max()):
        return Projection(np.zeros((x.shape[0], 2)), True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    dirs = np.zeros((2, x.shape[1]))
    k = min(2, vt.shape[0])
    dirs[:k] = vt[:k]
    for row in dirs:
        nz = np.flatnonzero(np.abs(row) > 1e-12)
        if nz.size and row[nz[0]] < 0:
            row *= -1
    return Projection(centered @ dirs.T, False)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))
