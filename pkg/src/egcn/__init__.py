"""Multimodal population-graph classifier: Chebyshev GCN branches fused by graph attention."""

__version__ = "0.1.0"
