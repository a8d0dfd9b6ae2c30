"""Inter-object relation graphs for refining 3D detection proposals."""
from .geometry import Box3D, bev_corners, convex_intersection_area, iou_3d, iou_bev
from .relation import ProposalSet, RelationConfig, RelationModule, forward
from .spatial_graph import GraphStrategy, RelationGraph, knn_graph, radius_graph

__version__ = "0.1.0"
