"""Two-stage TSP candidate-graph sparsification.

Stage 1 builds a high-recall base graph (alpha-nearest plus POPMUSIC), Stage 2
scores its edges with a linear model and prunes them per node.
"""
from .instances import DistanceType, Family, TspInstance, generate_instance, parse_tsplib, write_tsplib

__version__ = "0.1.0"

__all__ = [
    "DistanceType",
    "Family",
    "TspInstance",
    "generate_instance",
    "parse_tsplib",
    "write_tsplib",
    "__version__",
]
