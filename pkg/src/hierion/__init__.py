"""Hierarchical multi-cloud IoT analytics at desk scale.

Semantic sensor/service registry over an in-memory triple store, a SPARQL
subset with geospatial discovery builtins, virtual-sensor stream ingestion,
windowed mergeable aggregation, and exact federated aggregation across a
tree of analytics nodes.
"""

__version__ = "0.1.0"
