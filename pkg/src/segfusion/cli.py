"""Command line entry point: ``segfusion run|bench|synth|export``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, synthetic
from .core import CameraIntrinsics, Pose
from .dataset import load_sequence, write_synthetic_sequence
from .export import export_ply, load_snapshot, save_snapshot
from .pipeline import PipelineConfig, PipelineError, load_config, run_pipeline, write_metrics_csv

log = logging.getLogger("segfusion")


class CliError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config overrides")
    for f in dataclasses.fields(PipelineConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            group.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            group.add_argument(flag, dest=f.name, type={"int": int, "float": float}[f.type], default=None)


def _config_from_args(args) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    overrides = {
        f.name: getattr(args, f.name) for f in dataclasses.fields(PipelineConfig) if getattr(args, f.name) is not None
    }
    return config.replace(**overrides) if overrides else config


def cmd_run(args) -> None:
    try:
        config = _config_from_args(args)
    except (OSError, ValueError) as e:
        raise CliError("config", str(e)) from e
    try:
        manifest = load_sequence(args.manifest)
    except ValueError as e:
        raise CliError("load", str(e)) from e
    frames = manifest.frames(config.max_depth, config.n_classes)
    result = run_pipeline(frames, manifest.intrinsics, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        write_metrics_csv(out / "metrics.csv", result.metrics)
        save_snapshot(out / "map.npz", result.map, result.table)
        if len(result.map):
            export_ply(result.map, result.table, out / "map.ply")
        (out / "trajectory.txt").write_text(
            "".join(
                f"{m.frame} " + " ".join(f"{x:.9g}" for x in (*p.translation, *p.quaternion())) + "\n"
                for m, p in zip(result.metrics, result.poses)
            )
        )
    except OSError as e:
        raise CliError("write", str(e)) from e
    print(f"{len(result.metrics)} frames, {len(result.map)} surfels, {len(result.table)} labels -> {out}")


def cmd_bench(args) -> None:
    suite = bench.BenchmarkSuite.from_json(args.suite) if args.suite else bench.BenchmarkSuite()
    rows = bench.run_benchmark(suite)
    bench.write_csv(rows, args.out)
    for r in rows:
        print(", ".join(f"{k}={r[k]:.4g}" if isinstance(r[k], float) else f"{k}={r[k]}" for k in bench.COLUMNS))


def scene_from_spec(spec: dict) -> synthetic.Scene:
    """Build a scene from a JSON-style description.

    Keys: width, height, n_classes, noise, softness, seed, frames, and either
    ``archetype`` (painting_on_wall, room_corner, two_plane_corner,
    single_plane, random_room) or ``surfaces`` (list of ``{"type": "rect",
    "axis", "offset", "class", "lo", "hi"}`` or ``{"type": "box", "min",
    "max", "class"}``). ``trajectory`` is a list of
    ``[tx, ty, tz, qx, qy, qz, qw]``; otherwise ``motion`` picks
    ``static`` (default) or ``jitter``.
    """
    intr = CameraIntrinsics.default(int(spec.get("width", 320)), int(spec.get("height", 240)))
    n_classes = int(spec.get("n_classes", 13))
    seed = int(spec.get("seed", 0))
    rng = np.random.default_rng(seed)
    if "surfaces" in spec:
        surfaces = []
        for i, s in enumerate(spec["surfaces"]):
            if s["type"] == "box":
                surfaces += synthetic.box(s["min"], s["max"], int(s["class"]), object_id=i)
            else:
                lo = tuple(s.get("lo", (-np.inf, -np.inf)))
                hi = tuple(s.get("hi", (np.inf, np.inf)))
                surfaces.append(synthetic.Rect(int(s["axis"]), float(s["offset"]), int(s["class"]), lo, hi, i))
    else:
        kind = spec.get("archetype", "painting_on_wall")
        makers = {
            "painting_on_wall": lambda: synthetic.painting_on_wall(intr),
            "room_corner": synthetic.room_corner,
            "two_plane_corner": synthetic.two_plane_corner,
            "single_plane": synthetic.single_plane,
            "random_room": lambda: synthetic.random_room(rng, n_classes=n_classes),
        }
        if kind not in makers:
            raise ValueError(f"unknown archetype {kind!r}")
        surfaces = makers[kind]()
    if "trajectory" in spec:
        trajectory = [Pose.from_quaternion(p[:3], p[3:7]) for p in spec["trajectory"]]
    else:
        n = int(spec.get("frames", 10))
        if spec.get("motion", "static") == "jitter":
            trajectory = synthetic.jitter_trajectory(n, rng)
        else:
            trajectory = synthetic.static_trajectory(n)
    return synthetic.Scene(
        intr,
        surfaces,
        trajectory,
        n_classes=n_classes,
        noise=float(spec.get("noise", 0.0)),
        softness=float(spec.get("softness", 0.0)),
        seed=seed,
    )


def cmd_synth(args) -> None:
    try:
        spec = json.loads(Path(args.scene).read_text()) if args.scene else {}
        scene = scene_from_spec(spec)
        frames = synthetic.generate_synthetic_scene(scene)
    except (OSError, ValueError, KeyError) as e:
        raise CliError("synth", str(e)) from e
    manifest = write_synthetic_sequence(frames, scene.intrinsics, args.out, with_poses=not args.no_poses)
    print(manifest)


def cmd_export(args) -> None:
    try:
        smap, table = load_snapshot(args.snapshot)
        export_ply(smap, table, args.out, binary=not args.ascii)
    except (OSError, ValueError, KeyError) as e:
        raise CliError("export", str(e)) from e
    print(args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segfusion", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="process a sequence manifest")
    p.add_argument("manifest")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--out", required=True, help="output directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="segment fusion vs per-surfel baseline")
    p.add_argument("suite", nargs="?", help="JSON suite description")
    p.add_argument("--out", required=True, help="CSV report path")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="write a synthetic sequence to disk")
    p.add_argument("scene", nargs="?", help="JSON scene description")
    p.add_argument("--out", required=True)
    p.add_argument("--no-poses", action="store_true", help="omit ground-truth poses from the manifest")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("export", help="map snapshot (.npz) to PLY")
    p.add_argument("snapshot")
    p.add_argument("--out", required=True)
    p.add_argument("--ascii", action="store_true")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CliError as e:
        print(f"error [{e.stage}]: {e}", file=sys.stderr)
        return 2
    except PipelineError as e:
        print(f"error {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
