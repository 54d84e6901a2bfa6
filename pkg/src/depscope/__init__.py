"""Latency outlier detection and root-cause diffing over waiting-dependency graphs."""

__version__ = "0.1.0"

from .depgraph import DepGraph, Edge, Node, load_depgraph, load_depgraphs, node_paths, prune_edges, to_undirected
from .detection import DetectionConfig, dbscan, evaluate, ground_truth_labels, knn_outliers, optics, zscore_outliers
from .embedding import EmbeddingConfig, project_2d, train_embeddings, wl_relabel
from .generator import GeneratorConfig, generate
from .rootcause import compare, get_bold, merge_cluster

__all__ = [
    "DepGraph", "Edge", "Node", "load_depgraph", "load_depgraphs", "node_paths", "prune_edges",
    "to_undirected", "DetectionConfig", "dbscan", "evaluate", "ground_truth_labels",
    "knn_outliers", "optics", "zscore_outliers", "EmbeddingConfig", "project_2d",
    "train_embeddings", "wl_relabel", "GeneratorConfig", "generate", "compare", "get_bold",
    "merge_cluster",
]
