"""Run a library scenario end to end and print per-deployment and ground-truth metrics.

    python3 scripts/run_scenario.py two_room_building [--deployments N] [--out DIR]
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

import numpy as np

from ltvm import evaluation as ev
from ltvm import persistence as io
from ltvm.core import Config
from ltvm.pipeline import format_report, run_pipeline
from ltvm.scangen import LTF
from ltvm.worlds import LIBRARY


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("scenario", choices=sorted(LIBRARY))
    ap.add_argument("--deployments", type=int)
    ap.add_argument("--out", type=Path, help="write the final map and SVG here")
    args = ap.parse_args()

    kw = {} if args.deployments is None else {"deployments": args.deployments}
    sc = LIBRARY[args.scenario](**kw)
    config = Config()
    t0 = time.perf_counter()
    data = [sc.deployment(k) for k in range(sc.deployments)]
    print(f"generated {sc.deployments} deployments in {time.perf_counter() - t0:.1f}s")

    walls = sc.environment.walls
    t1 = time.perf_counter()

    def progress(i, out):
        r = out.report
        sep = ev.pairwise_separation_error(out.state.vmap.lines, walls, config.t_r)
        print(f"[{time.perf_counter() - t1:6.1f}s] deployment {i}: kept {r.filtered}/{r.observations}, "
              f"{r.lines_extracted} lines, map {r.map_lines}, separation error {sep:.4f} m")

    state, reports = run_pipeline([d.scan for d in data], config, sc.sensor, on_deployment=progress)
    elapsed = time.perf_counter() - t0
    lines = state.vmap.lines
    last = data[-1]
    ltf = last.scan.world_points()[last.labels == LTF]
    print(f"total {elapsed:.1f}s, {len(lines)} map lines, {len(io.format_map(state.vmap))} bytes")
    print(f"line fit MSE (final deployment LTF points): {ev.line_fit_mse(ltf, lines, config.t_r):.3e} m^2")
    for d in ev.door_checks(lines, walls, config.t_r):
        print(f"wall {d.wall} door {d.door}: intrusion {d.intrusion:.3f} m, "
              f"flank coverage {d.flank_coverage[0]:.2f} / {d.flank_coverage[1]:.2f}")
    edges = ev.stf_edges_off_walls(sc.environment, sc.deployments, config.t_r)
    if edges:
        print(f"lines near obstacle edges: {ev.stf_violations(lines, edges, config.t_r)} "
              f"({len(edges)} edges checked)")
    for l in lines:
        print(f"  {np.round(l.p1, 3)} -> {np.round(l.p2, 3)}  mass {l.mass:.0f}")
    print(format_report(reports[-1]), end="")
    if args.out:
        from ltvm.cli import map_to_svg
        args.out.mkdir(parents=True, exist_ok=True)
        io.write_map(args.out / "map.json", state.vmap)
        (args.out / "map.svg").write_text(map_to_svg(state.vmap))


if __name__ == "__main__":
    main()
