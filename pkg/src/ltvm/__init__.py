"""Long-term vector maps from repeated 2-D laser deployments."""

from .core import CompositeScan, Config, Observation, Pose, SensorModel, load_config, observation_world_point
from .extract import LineFeature, extract_lines, extract_segments, fit_segment
from .mapupdate import VectorMap, chi_sq_gate, merge_lines, prune_against_sdf, update_map
from .pipeline import PipelineState, process_deployment, run_pipeline
from .sdf import SdfGrid, build_st_sdf, filter_scan, normalize_weights, update_lt_sdf
from .uncertainty import estimate_endpoint_covariance, sensor_covariance

__all__ = [
    "CompositeScan", "Config", "LineFeature", "Observation", "PipelineState", "Pose", "SdfGrid",
    "SensorModel", "VectorMap", "build_st_sdf", "chi_sq_gate", "estimate_endpoint_covariance",
    "extract_lines", "extract_segments", "filter_scan", "fit_segment", "load_config", "merge_lines",
    "normalize_weights", "observation_world_point", "process_deployment", "prune_against_sdf",
    "run_pipeline", "sensor_covariance", "update_lt_sdf", "update_map",
]
