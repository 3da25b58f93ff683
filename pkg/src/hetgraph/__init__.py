"""Hierarchical scene-graph generation at desk scale.

Builds Hierarchical Entity Trees over detected boxes, encodes them with
tree/sibling LSTMs, ranks relations by a saliency- and size-aware ranker and
scores key-relation recall.
"""

__version__ = "0.1.0"

from .het import HetTree, Strategy, build_het, depth_of  # noqa: E402
from .scene import BoundingBox, Entity, RelationTriplet, SceneRecord, area, intersection_area, iou  # noqa: E402

__all__ = ["BoundingBox", "Entity", "RelationTriplet", "SceneRecord", "area", "intersection_area", "iou",
           "HetTree", "Strategy", "build_het", "depth_of", "__version__"]
