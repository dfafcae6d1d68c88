from .corridor import CorridorSpec, ScenarioTruth, WallTruth, generate_corridor
from .render import FrameObservation, NoiseModel, render_frame, render_true_depth, simulate_dataset
from .evaluate import (
    DepthMetrics,
    EvalReport,
    PlaneMetrics,
    TrajectoryMetrics,
    evaluate,
    evaluate_depth,
    evaluate_planes,
    evaluate_trajectory,
)

__all__ = [
    "CorridorSpec",
    "ScenarioTruth",
    "WallTruth",
    "generate_corridor",
    "FrameObservation",
    "NoiseModel",
    "render_frame",
    "render_true_depth",
    "simulate_dataset",
    "TrajectoryMetrics",
    "PlaneMetrics",
    "DepthMetrics",
    "EvalReport",
    "evaluate",
    "evaluate_trajectory",
    "evaluate_planes",
    "evaluate_depth",
]
