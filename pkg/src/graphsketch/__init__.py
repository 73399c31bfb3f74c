"""Linear sketches of dynamic graph streams and spectral-sparsifier decoding."""

from .decode import GlobalParams, build_stack, build_tree, decode, pinned_gamma
from .graph_core import EdgeKey, Graph, WeightedGraph
from .sketches import DecodeFailure, SketchStack

__all__ = [
    "DecodeFailure",
    "EdgeKey",
    "GlobalParams",
    "Graph",
    "SketchStack",
    "WeightedGraph",
    "build_stack",
    "build_tree",
    "decode",
    "pinned_gamma",
]
