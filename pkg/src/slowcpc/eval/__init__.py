"""Frozen-feature evaluation: ABX, linear probes, clustering."""

from .abx import AbxItem, AbxReport, abx_score, dtw_distance, frame_distance, load_abx_items
from .cluster import ClusterReport, cluster_report, contingency, kmeans, nmi, purity
from .features import extract_features, read_features, write_features
from .probe import ProbeReport, train_linear_probe, utterance_embedding

__all__ = [
    "AbxItem", "AbxReport", "abx_score", "dtw_distance", "frame_distance", "load_abx_items",
    "ClusterReport", "cluster_report", "contingency", "kmeans", "nmi", "purity",
    "extract_features", "read_features", "write_features",
    "ProbeReport", "train_linear_probe", "utterance_embedding",
]
