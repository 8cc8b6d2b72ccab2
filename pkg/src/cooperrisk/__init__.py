"""Cooperative perception, prediction and risk-map planning for connected vehicles."""

from .metrics import average_precision, collision_rate, epa, match_detections, min_ade_fde
from .pipeline import PipelineConfig, Report, StageError, run_pipeline, sweep
from .planner import PlannerConfig, PlanResult, solve_mpc
from .prediction import (
    PredictorConfig,
    TrajectoryDistribution,
    enforce_scene_consistency,
    predict_cv,
    predict_multimodal,
    trajectory_overlap_rate,
)
from .riskmap import (
    EgoHypothesis,
    GaussianComponent,
    GridSpec,
    RiskCoeffs,
    RiskMap,
    build_risk_map,
    exposure_offsets,
    hierarchical_risk,
    risk_value,
    severity_delta_v,
)
from .scene import DetectionBox, NoiseProfile, ObjectState, ScenarioLog, generate_scenario

__version__ = "0.1.0"

__all__ = [
    "DetectionBox",
    "EgoHypothesis",
    "GaussianComponent",
    "GridSpec",
    "NoiseProfile",
    "ObjectState",
    "PipelineConfig",
    "PlanResult",
    "PlannerConfig",
    "PredictorConfig",
    "Report",
    "RiskCoeffs",
    "RiskMap",
    "ScenarioLog",
    "StageError",
    "TrajectoryDistribution",
    "average_precision",
    "build_risk_map",
    "collision_rate",
    "enforce_scene_consistency",
    "epa",
    "exposure_offsets",
    "generate_scenario",
    "hierarchical_risk",
    "match_detections",
    "min_ade_fde",
    "predict_cv",
    "predict_multimodal",
    "risk_value",
    "run_pipeline",
    "severity_delta_v",
    "solve_mpc",
    "sweep",
    "trajectory_overlap_rate",
]
