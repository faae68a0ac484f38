"""Command-line entry point: ``ltvm {run,filter,extract,update,render,generate}``."""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import persistence as io
from .core import CONFIG_FIELDS, SENSOR_FIELDS, Config, ConfigError, SensorModel, _INT_FIELDS, load_config
from .mapupdate import VectorMap
from .pipeline import (DeploymentReport, PipelineState, StageError, extract_stage, filter_stage,
                       format_report, process_deployment, update_stage)
from .scangen import ScenarioError, load_scenario
from .uncertainty import covariance_ellipse

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_STAGE = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _existing(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {p}")
    return p


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int, help="overrides rng_seed")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    g = p.add_argument_group("parameter overrides")
    for name in CONFIG_FIELDS + SENSOR_FIELDS:
        g.add_argument(f"--{name}", type=int if name in _INT_FIELDS else float, metavar="V")


def _settings(args) -> tuple[Config, SensorModel]:
    if args.config:
        config, sensor = load_config(_existing(args.config))
    else:
        config, sensor = Config(), SensorModel()
    cfg = {k: getattr(args, k) for k in CONFIG_FIELDS if getattr(args, k) is not None}
    sen = {k: getattr(args, k) for k in SENSOR_FIELDS if getattr(args, k) is not None}
    if args.seed is not None:
        cfg["rng_seed"] = args.seed
    try:
        config = config.replace(**cfg)
        sensor = SensorModel(**{**{k: getattr(sensor, k) for k in SENSOR_FIELDS}, **sen})
        config.check_sensor(sensor)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return config, sensor


# ---------------------------------------------------------------- stages


def cmd_filter(args) -> int:
    config, sensor = _settings(args)
    scan = io.read_scan(_existing(args.scan), args.deployment)
    lt = io.read_sdf(_existing(args.lt)) if args.lt else None
    try:
        lt, mask = filter_stage(scan, lt, config, sensor)
    except ValueError as exc:
        raise StageError(args.deployment, "filter", exc) from exc
    io.write_sdf(args.out_lt, lt)
    io.write_scan(args.out, scan.subset(mask))
    return EXIT_OK


def cmd_extract(args) -> int:
    config, sensor = _settings(args)
    filtered = io.read_scan(_existing(args.scan), args.deployment)
    try:
        lines, _ = extract_stage(filtered, config, sensor, args.deployment, args.threads)
    except ValueError as exc:
        raise StageError(args.deployment, "extract", exc) from exc
    io.write_map(args.out, VectorMap(tuple(lines), 0, config))
    return EXIT_OK


def cmd_update(args) -> int:
    config, sensor = _settings(args)
    lines = io.read_map(_existing(args.lines)).lines
    prior = io.read_map(_existing(args.map)) if args.map else VectorMap(config_snapshot=config)
    lt = io.read_sdf(_existing(args.lt))
    try:
        vmap, _ = update_stage(lines, prior, lt, config, sensor, args.deployment)
    except ValueError as exc:
        raise StageError(args.deployment, "update", exc) from exc
    io.write_map(args.out, vmap)
    return EXIT_OK


def cmd_run(args) -> int:
    config, sensor = _settings(args)
    scans = io.read_manifest(_existing(args.manifest))
    for s in scans:
        _existing(s)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    state = PipelineState(vmap=VectorMap(config_snapshot=config))
    metrics = out / "metrics.txt"
    metrics.write_text("")
    for index, path in enumerate(scans):
        scan = io.read_scan(path, index)
        result = process_deployment(scan, state, config, sensor, index, args.threads)
        state, report = result.state, result.report
        ddir = out / f"deployment_{index:03d}"
        ddir.mkdir(exist_ok=True)
        io.write_sdf(ddir / "lt_sdf.bin", state.lt)
        io.write_scan(ddir / "filtered.txt", result.filtered)
        io.write_map(ddir / "lines.json", VectorMap(tuple(result.lines), 0, config))
        io.write_map(ddir / "map.json", state.vmap)
        io.write_map(out / "map.json", state.vmap)
        io.write_sdf(out / "lt_sdf.bin", state.lt)
        with metrics.open("a") as fh:
            fh.write(format_report(report) + "\n")
        if not args.quiet:
            print(_summary(report), file=sys.stderr)
    return EXIT_OK


def _summary(r: DeploymentReport) -> str:
    return (f"deployment {r.deployment}: {r.observations} obs, {r.filtered} kept, "
            f"{r.lines_extracted} lines, map {r.map_lines}")


# ---------------------------------------------------------------- rendering


def map_to_svg(vmap: VectorMap, scale: float = 100.0, margin: float = 0.5) -> str:
    """Segments as paths plus a 3-sigma ellipse per endpoint covariance."""
    if vmap.lines:
        pts = np.array([p for l in vmap.lines for p in (l.p1, l.p2)])
        lo, hi = pts.min(axis=0) - margin, pts.max(axis=0) + margin
    else:
        lo, hi = np.zeros(2), np.ones(2)
    width, height = (hi - lo) * scale

    def xy(p):
        return (p[0] - lo[0]) * scale, (hi[1] - p[1]) * scale

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.1f}" height="{height:.1f}" '
           f'viewBox="0 0 {width:.1f} {height:.1f}">',
           '<rect width="100%" height="100%" fill="white"/>']
    for line in vmap.lines:
        (x1, y1), (x2, y2) = xy(line.p1), xy(line.p2)
        out.append(f'<path d="M {x1:.2f} {y1:.2f} L {x2:.2f} {y2:.2f}" stroke="black" '
                   f'stroke-width="2" fill="none"/>')
    for line in vmap.lines:
        for p, q in ((line.p1, line.q1), (line.p2, line.q2)):
            a, b, ang = covariance_ellipse(q)
            cx, cy = xy(p)
            out.append(f'<ellipse cx="{cx:.2f}" cy="{cy:.2f}" rx="{max(a * scale, 0.5):.3f}" '
                       f'ry="{max(b * scale, 0.5):.3f}" transform="rotate({-math.degrees(ang):.3f} '
                       f'{cx:.2f} {cy:.2f})" stroke="red" fill="none"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_render(args) -> int:
    src = _existing(args.input)
    with open(src, "rb") as fh:
        magic = fh.read(len(io.SDF_MAGIC))
    if magic == io.SDF_MAGIC:
        io.write_sdf_png(args.out, io.read_sdf(src), args.field)
    else:
        Path(args.out).write_text(map_to_svg(io.read_map(src), args.scale))
    return EXIT_OK


def cmd_generate(args) -> int:
    sc = load_scenario(_existing(args.scenario))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = args.deployments if args.deployments is not None else sc.deployments
    paths = []
    for k in range(n):
        ls = sc.deployment(k)
        p = out / f"scan_{k:03d}.txt"
        io.write_scan(p, ls.scan)
        io.write_labels(out / f"labels_{k:03d}.txt", ls.labels)
        paths.append(p)
    io.write_manifest(out / "manifest.txt", paths)
    return EXIT_OK


# ---------------------------------------------------------------- entry


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ltvm", description="Long-term vector mapping from 2-D laser deployments.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full pipeline over a manifest of deployments")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("filter", help="fold a scan into the long-term SDF and filter it")
    p.add_argument("--scan", required=True)
    p.add_argument("--lt", help="prior long-term SDF (omit for the first deployment)")
    p.add_argument("--out-lt", required=True)
    p.add_argument("--out", required=True, help="filtered scan")
    p.add_argument("--deployment", type=int, default=0)
    _add_config_flags(p)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("extract", help="lines with endpoint covariances from a filtered scan")
    p.add_argument("--scan", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--deployment", type=int, default=0)
    _add_config_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("update", help="prune and merge new lines into a map")
    p.add_argument("--lines", required=True)
    p.add_argument("--map", help="prior map (omit for an empty map)")
    p.add_argument("--lt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--deployment", type=int, default=0)
    _add_config_flags(p)
    p.set_defaults(func=cmd_update)

    p = sub.add_parser("render", help="SVG of a map or PNG of an SDF plane")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--field", choices=("weights", "values"), default="weights")
    p.add_argument("--scale", type=float, default=100.0, help="SVG pixels per meter")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("generate", help="synthetic deployments from a scenario file")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--deployments", type=int)
    p.set_defaults(func=cmd_generate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ltvm: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"ltvm: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (io.FormatError, ConfigError, ScenarioError, ValueError) as exc:
        print(f"ltvm: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"ltvm: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
