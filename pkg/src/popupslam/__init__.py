"""Monocular plane SLAM from ground-wall boundary edges.

Walls are popped up from where they meet the floor in a single image,
tracked as compact plane landmarks in a factor graph together with the
camera poses, and re-generated from their stored pixels whenever the
poses improve. A corridor simulator, a depth-fusion utility and a CLI
round the toolkit out.
"""

from .boundary import (
    BoundaryCurve,
    EdgeSegment,
    SelectionParams,
    brute_force_select,
    coverage_score,
    greedy_select,
    postprocess_edges,
)
from .errors import (
    BehindCamera,
    CameraBelowGround,
    ConfigError,
    DataFormatError,
    DegenerateEdge,
    DegeneratePolygon,
    DegenerateVanishingPoints,
    DimensionMismatch,
    EmptyFrame,
    InvalidSpec,
    LabelMismatch,
    LengthMismatch,
    PopupSlamError,
    RayParallelToPlane,
    SingularSystem,
    TooManyEdges,
    UnknownLandmark,
)
from .fusion import DepthHypothesis, PixelNoise, fuse, fuse_depth_map, variance_map
from .geometry import (
    GROUND,
    GROUND_WORLD,
    WALL,
    CameraIntrinsics,
    HomogeneousPlane,
    Pose,
    PopupMeasurement,
    backproject_to_plane,
    popup_frame,
    rotation_from_vanishing_points,
    transform_plane,
    wall_from_ground_edge,
)
from .graph import (
    FactorGraph,
    OptimizeReport,
    PlaneLandmark,
    PoseNode,
    RepopupReport,
    SolverSettings,
    optimize,
    predict_pose_constant_velocity,
    repopup_measurements,
)
from .assoc import (
    AssociationParams,
    LoopCandidate,
    LoopParams,
    associate,
    detect_loop_geometric,
    merge_landmarks,
    plane_pair_scores,
)
from .minimal import MinimalPlane

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "BoundaryCurve", "EdgeSegment", "SelectionParams",
    "brute_force_select", "coverage_score", "greedy_select", "postprocess_edges",
    "PopupSlamError", "RayParallelToPlane", "BehindCamera", "DegenerateEdge",
    "DegenerateVanishingPoints", "CameraBelowGround", "EmptyFrame", "TooManyEdges",
    "SingularSystem", "LabelMismatch", "UnknownLandmark", "DegeneratePolygon",
    "DimensionMismatch", "LengthMismatch", "InvalidSpec", "DataFormatError", "ConfigError",
    "DepthHypothesis", "PixelNoise", "fuse", "fuse_depth_map", "variance_map",
    "GROUND", "GROUND_WORLD", "WALL",
    "CameraIntrinsics", "HomogeneousPlane", "Pose", "PopupMeasurement",
    "backproject_to_plane", "popup_frame", "rotation_from_vanishing_points",
    "transform_plane", "wall_from_ground_edge",
    "FactorGraph", "OptimizeReport", "PlaneLandmark", "PoseNode", "RepopupReport",
    "SolverSettings", "optimize", "predict_pose_constant_velocity", "repopup_measurements",
    "AssociationParams", "LoopCandidate", "LoopParams", "associate",
    "detect_loop_geometric", "merge_landmarks", "plane_pair_scores",
    "MinimalPlane",
]
