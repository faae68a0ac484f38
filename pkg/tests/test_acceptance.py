"""End-to-end acceptance checks on the synthetic scenario library.

Each test prints one ``criterion N: PASS|FAIL`` line with the measured values.
Runtimes cover the pipeline only: scan generation is timed separately and
the numba kernels are compiled by a warm-up run before any clock starts.
"""

from __future__ import annotations

import subprocess
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from ltvm import evaluation as ev
from ltvm import persistence as io
from ltvm.core import Config
from ltvm.pipeline import run_pipeline
from ltvm.scangen import LTF, realize_deployment
from ltvm.worlds import l_room, square_room, stf_hall, two_room_building

ROOT = Path(__file__).resolve().parents[1]
RUNTIME_LIMIT = 60.0
MSE_LIMIT = 3e-4
SEPARATION_LIMIT = 0.025
DRIFT_LIMIT = 0.01
MAX_LINES = 40
MAX_MAP_BYTES = 16 * 1024
# a flank counts as present when the map covers this share of it
FLANK_PRESENT = 0.9


@dataclass
class Run:
    scenario: object
    data: list
    vmap: object
    reports: list
    separation: list
    generation_seconds: float
    pipeline_seconds: float

    @property
    def lines(self):
        return self.vmap.lines

    def final_ltf_mse(self, t_r):
        last = self.data[-1]
        return ev.line_fit_mse(last.scan.world_points()[last.labels == LTF], self.lines, t_r)


def report(capsys, number: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="module")
def config():
    return Config()


@pytest.fixture(scope="module")
def warm(config):
    sc = square_room(deployments=2)
    run_pipeline([sc.deployment(k).scan for k in range(2)], config, sc.sensor)


def _execute(scenario, config) -> Run:
    t0 = time.perf_counter()
    data = [scenario.deployment(k) for k in range(scenario.deployments)]
    t1 = time.perf_counter()
    walls = scenario.environment.walls
    separation = []
    state, reports = run_pipeline(
        [d.scan for d in data], config, scenario.sensor,
        on_deployment=lambda i, out: separation.append(
            ev.pairwise_separation_error(out.state.vmap.lines, walls, config.t_r)))
    t2 = time.perf_counter()
    return Run(scenario, data, state.vmap, reports, separation, t1 - t0, t2 - t1)


@pytest.fixture(scope="module")
def building(warm, config):
    return _execute(two_room_building(), config)


@pytest.fixture(scope="module")
def hall(warm, config):
    return _execute(stf_hall(), config)


@pytest.fixture(scope="module")
def lroom(warm, config):
    return _execute(l_room(), config)


def _timing(run: Run) -> str:
    return (f"pipeline {run.pipeline_seconds:.1f} s, with generation "
            f"{run.pipeline_seconds + run.generation_seconds:.1f} s")


def test_criterion_1_doorways(building, config, capsys):
    sc = building.scenario
    q = config.grid_resolution_q
    opened = np.zeros(sum(len(w.doors) for w in sc.environment.walls), dtype=int)
    for k in range(sc.deployments):
        opened += np.array(realize_deployment(sc.environment, k).door_open, dtype=int)
    checks = ev.door_checks(building.lines, sc.environment.walls, config.t_r)
    worst = max(c.intrusion for c in checks)
    weakest = min(min(c.flank_coverage) for c in checks)
    observations = min(r.observations for r in building.reports)
    ok = (len(checks) == 4 and opened.min() >= 2 and worst <= 2 * q and weakest >= FLANK_PRESENT
          and building.pipeline_seconds < RUNTIME_LIMIT)
    report(capsys, 1, ok, f"doors {len(checks)}, open counts {opened.tolist()}, worst intrusion {worst:.3f} m "
                  f"(limit {2 * q:.2f}), weakest flank {weakest:.2f}, min observations {observations}, "
                  f"{_timing(building)}")
    assert ok


def test_criterion_2_stf_rejection(hall, config, capsys):
    sc = hall.scenario
    edges = ev.stf_edges_off_walls(sc.environment, sc.deployments, config.t_r)
    presence = [o.presence for o in sc.environment.stfs]
    violations = ev.stf_violations(hall.lines, edges, config.t_r)
    ok = (len(presence) == 20 and violations == 0 and hall.pipeline_seconds < RUNTIME_LIMIT)
    report(capsys, 2, ok, f"boxes {len(presence)} (presence {min(presence):.1f}-{max(presence):.1f}), "
                  f"{violations} lines near {len(edges)} obstacle edges, {_timing(hall)}")
    assert ok


def test_criterion_3_pairwise_separation(lroom, capsys):
    walls = lroom.scenario.environment.walls
    err = lroom.separation[-1]
    ok = len(walls) == 6 and lroom.scenario.sensor.sigma_rho == 0.01 and err <= SEPARATION_LIMIT
    report(capsys, 3, ok, f"mean pairwise separation error {err:.4f} m over {len(walls)} walls "
                  f"(limit {SEPARATION_LIMIT})")
    assert ok


def test_criterion_4_line_fit_mse(building, hall, lroom, config, capsys):
    mse = {r.scenario.name: r.final_ltf_mse(config.t_r) for r in (building, hall, lroom)}
    ok = all(v <= MSE_LIMIT for v in mse.values())
    report(capsys, 4, ok, ", ".join(f"{k} {v:.2e} m^2" for k, v in mse.items()) + f" (limit {MSE_LIMIT:.0e})")
    assert ok


def test_criterion_5_compactness(building, capsys):
    size = len(io.format_map(building.vmap).encode())
    ok = len(building.lines) <= MAX_LINES and size < MAX_MAP_BYTES
    report(capsys, 5, ok, f"{len(building.lines)} lines, {size} bytes")
    assert ok


def test_criterion_6_no_degradation(lroom, capsys):
    early, late = lroom.separation[1], lroom.separation[11]
    ok = abs(late - early) <= DRIFT_LIMIT
    report(capsys, 6, ok, f"separation error {early:.4f} m after deployment index 1, "
                  f"{late:.4f} m after index 11")
    assert ok


PROPERTY_TESTS = [
    "tests/test_sdf.py::test_st_sdf_permutation_invariance",
    "tests/test_sdf.py::test_truncation_bound_after_updates",
    "tests/test_sdf.py::test_filter_monotone_in_t2",
    "tests/test_extract.py::test_partition_property",
    "tests/test_extract.py::test_fit_segment_beats_grid_oracle",
    "tests/test_uncertainty.py::test_trace_and_determinant_identities",
    "tests/test_uncertainty.py::test_covariances_are_psd_and_deterministic",
    "tests/test_mapupdate.py::test_scatter_merge_matches_pooled_points",
    "tests/test_mapupdate.py::test_merge_commutes",
    "tests/test_mapupdate.py::test_update_reaches_merge_fixpoint_and_conserves_mass",
    "tests/test_mapupdate.py::test_mass_conservation_with_pruning",
    "tests/test_persistence.py::test_map_round_trip_bit_exact",
    "tests/test_persistence.py::test_scan_round_trip_bit_exact",
    "tests/test_persistence.py::test_sdf_round_trip_bit_exact",
    "tests/test_cli.py::test_run_is_byte_reproducible",
]


def test_criterion_7_property_suite(capsys):
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *PROPERTY_TESTS],
                          cwd=ROOT, capture_output=True, text=True)
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr.strip()
    ok = proc.returncode == 0
    report(capsys, 7, ok, f"{len(PROPERTY_TESTS)} property tests: {tail}")
    assert ok, proc.stdout[-4000:]
