"""Per-deployment composition of the SDF, extraction, uncertainty and map stages."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import STAGE_EXTRACT, STAGE_PRUNE, STAGE_UNCERTAINTY, CompositeScan, Config, SensorModel, child_seed
from .extract import LineFeature, extract_segments
from .mapupdate import UpdateStats, VectorMap, update_map_with_stats
from .sdf import SdfGrid, build_st_sdf, filter_mask, normalize_weights, update_lt_sdf
from .uncertainty import estimate_endpoint_covariance


class StageError(RuntimeError):
    def __init__(self, deployment: int, stage: str, cause: Exception):
        super().__init__(f"deployment {deployment}, stage {stage}: {cause}")
        self.deployment = deployment
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineState:
    lt: SdfGrid | None = None
    vmap: VectorMap = field(default_factory=VectorMap)


@dataclass
class DeploymentReport:
    deployment: int
    observations: int
    filtered: int
    lines_extracted: int
    unclaimed: int
    map_lines: int
    map_mass: float
    stats: UpdateStats

    @property
    def filtered_fraction(self) -> float:
        return self.filtered / self.observations if self.observations else 0.0

    def as_items(self) -> list[tuple[str, object]]:
        s = self.stats
        return [("deployment", self.deployment), ("observations", self.observations),
                ("filtered", self.filtered), ("filtered_fraction", repr(round(self.filtered_fraction, 6))),
                ("lines_extracted", self.lines_extracted), ("unclaimed", self.unclaimed),
                ("inserted", s.inserted), ("merged", s.merged), ("fixpoint_merges", s.fixpoint_merges),
                ("pruned_kept", s.kept), ("pruned_deleted", s.deleted), ("pruned_split", s.split),
                ("prune_fragments", s.fragments), ("map_lines", self.map_lines),
                ("map_mass", repr(self.map_mass))]


def format_report(report: DeploymentReport) -> str:
    return "".join(f"{k}={v}\n" for k, v in report.as_items())


def stage_seed(config: Config, deployment: int, *keys: int) -> int:
    return child_seed(config.rng_seed, deployment, *keys)


def filter_stage(scan: CompositeScan, lt: SdfGrid | None, config: Config,
                 sensor: SensorModel) -> tuple[SdfGrid, np.ndarray]:
    """Build and normalize the short-term grid, fold it into ``lt``, and mask the scan."""
    st = normalize_weights(build_st_sdf(scan, config, sensor), config.t1_df)
    lt = update_lt_sdf(lt, st)
    return lt, filter_mask(scan, lt, config)


def extract_stage(filtered: CompositeScan, config: Config, sensor: SensorModel, deployment: int,
                  threads: int = 1) -> tuple[list[LineFeature], int]:
    """Lines with Monte Carlo endpoint covariances, and the number of unclaimed points."""
    ex = extract_segments(filtered, config, seed=stage_seed(config, deployment, STAGE_EXTRACT))

    def one(i):
        line, idx = ex.lines[i], ex.inliers[i]
        q1, q2 = estimate_endpoint_covariance(line, filtered.subset(idx), config.mc_samples_k, sensor,
                                              stage_seed(config, deployment, STAGE_UNCERTAINTY, i))
        return line.replace(q1=q1, q2=q2)

    if threads > 1 and len(ex.lines) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            lines = list(pool.map(one, range(len(ex.lines))))
    else:
        lines = [one(i) for i in range(len(ex.lines))]
    return lines, int(ex.unclaimed.size)


def update_stage(lines, vmap: VectorMap, lt: SdfGrid, config: Config, sensor: SensorModel,
                 deployment: int) -> tuple[VectorMap, UpdateStats]:
    return update_map_with_stats(lines, vmap, lt, config, sensor,
                                 stage_seed(config, deployment, STAGE_PRUNE))


@dataclass
class DeploymentOutput:
    state: PipelineState
    report: DeploymentReport
    filtered: CompositeScan
    lines: list[LineFeature]


def process_deployment(scan: CompositeScan, state: PipelineState, config: Config, sensor: SensorModel,
                       deployment: int, threads: int = 1) -> DeploymentOutput:
    """One full deployment; any failure is re-raised as :class:`StageError`."""
    stage = "filter"
    try:
        lt, mask = filter_stage(scan, state.lt, config, sensor)
        filtered = scan.subset(mask)
        stage = "extract"
        lines, unclaimed = extract_stage(filtered, config, sensor, deployment, threads)
        stage = "update"
        vmap, stats = update_stage(lines, state.vmap, lt, config, sensor, deployment)
    except (ValueError, ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        raise StageError(deployment, stage, exc) from exc
    report = DeploymentReport(deployment, len(scan), int(mask.sum()), len(lines), unclaimed,
                              len(vmap), vmap.total_mass, stats)
    return DeploymentOutput(PipelineState(lt, vmap), report, filtered, lines)


def run_pipeline(scans, config: Config, sensor: SensorModel, threads: int = 1, on_deployment=None):
    """Process deployments in order; ``on_deployment(index, output)`` is called after each."""
    config.check_sensor(sensor)
    state = PipelineState(vmap=VectorMap(config_snapshot=config))
    reports = []
    for index, scan in enumerate(scans):
        out = process_deployment(scan, state, config, sensor, index, threads)
        state = out.state
        reports.append(out.report)
        if on_deployment is not None:
            on_deployment(index, out)
    return state, reports
