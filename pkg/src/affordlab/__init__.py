"""Metric-learning critic laboratory on a synthetic hierarchical affordance world."""

__version__ = "0.1.0"
