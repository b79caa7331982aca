"""Topology-aware memory benchmarking: datapath bandwidth bounds plus
synchronized bandwidth/latency measurement on host cores."""

__version__ = "0.1.0"
