"""Frame-by-frame orchestration of tracking, segmentation, mapping and fusion."""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import geometry, segmentation
from .core import DEFAULT_MAX_DEPTH, CameraIntrinsics, Pose
from .dataset import Frame
from .geometry import NormalMap, VertexMap
from .mapping import SurfelMap, apply_merge_directives, fuse_frame, render_label_map
from .segmentation import MergeDirective
from .semfusion import (
    LabelTable,
    PerSurfelBaseline,
    compute_cell_overlaps,
    merge_label_records,
    update_label_probabilities,
)

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, frame: int, cause: BaseException):
        super().__init__(f"[{stage}] frame {frame}: {cause}")
        self.stage = stage
        self.frame = frame
        self.cause = cause


@dataclass
class PipelineConfig:
    n_classes: int = 13
    edge_max_angle_deg: float = 20.0
    edge_max_distance: float = 0.05
    rho_prop: float = 0.3
    rho_merge: float = 0.2
    min_segment_px: int = 64
    icp_max_distance: float = 0.1
    icp_max_angle_deg: float = 30.0
    icp_min_inliers: int = 100
    icp_levels: int = 3
    icp_iterations: int = 10
    fuse_max_distance: float = 0.05
    fuse_max_angle_deg: float = 30.0
    max_weight: float = 100.0
    fusion_stride: int = 1
    max_depth: float = DEFAULT_MAX_DEPTH
    use_gt_poses: bool = True
    baseline: bool = False
    geometric_only: bool = False

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be at least 2")
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.type in ("float", "int") and not v > 0:
                raise ValueError(f"{f.name} must be positive, got {v}")

    @classmethod
    def from_mapping(cls, values: dict) -> "PipelineConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            name = key.strip().replace("-", "_")
            if name not in known:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[name] = _coerce(known[name].type, raw)
        return cls(**kwargs)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


def _coerce(type_name: str, raw):
    if not isinstance(raw, str):
        return raw
    if type_name == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return {"int": int, "float": float}[type_name](raw)


def load_config(path) -> PipelineConfig:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        k, v = line.split("=", 1)
        values[k.strip()] = v.strip()
    return PipelineConfig.from_mapping(values)


STAGES = (
    "tracking",
    "maps",
    "geometric_edges",
    "semantic_edges",
    "components",
    "render",
    "propagate",
    "fuse",
    "prob_fusion",
    "baseline",
)


@dataclass
class FrameMetrics:
    frame: int
    n_surfels: int
    n_labels: int
    mean_labels_per_cell: float
    bytes_segment: int
    bytes_baseline: int
    times_ms: dict[str, float] = field(default_factory=dict)

    def row(self) -> dict:
        out = {k: v for k, v in dataclasses.asdict(self).items() if k != "times_ms"}
        for s in STAGES:
            out[f"t_{s}_ms"] = self.times_ms.get(s, 0.0)
        return out


@dataclass
class FrameTrace:
    """What one frame did to the label state, for replay and inspection."""

    index: int
    pose: Pose
    fresh_labels: np.ndarray
    merges: tuple[MergeDirective, ...]
    rendered: np.ndarray  # post-fusion label map used for probability fusion
    prediction: np.ndarray | None
    edges: np.ndarray
    geometric_edges: np.ndarray
    segments: segmentation.SegmentFrame


@dataclass
class PipelineResult:
    map: SurfelMap
    table: LabelTable
    metrics: list[FrameMetrics]
    poses: list[Pose]
    baseline: PerSurfelBaseline | None = None


@contextmanager
def _timed(times: dict, stage: str, frame: int):
    t0 = time.perf_counter()
    try:
        yield
    except PipelineError:
        raise
    except Exception as e:
        raise PipelineError(stage, frame, e) from e
    times[stage] = times.get(stage, 0.0) + (time.perf_counter() - t0) * 1e3


def model_maps(smap: SurfelMap, pose: Pose, intr: CameraIntrinsics) -> tuple[VertexMap, NormalMap]:
    """Vertex and normal maps of the surfel map seen from ``pose``, in that camera's frame."""
    rendered = render_label_map(smap, pose, intr)
    hit = rendered.index >= 0
    inv = pose.inverse()
    pts = np.zeros(intr.shape + (3,))
    nrm = np.zeros(intr.shape + (3,))
    ids = rendered.index[hit]
    pts[hit] = inv.transform(smap.positions[ids])
    nrm[hit] = inv.rotate(smap.normals[ids])
    return VertexMap(pts, hit), NormalMap(nrm, hit)


class Pipeline:
    """Stateful per-frame processor; ``run_pipeline`` drives it over a sequence."""

    def __init__(self, intr: CameraIntrinsics, config: PipelineConfig | None = None):
        self.intr = intr
        self.config = config or PipelineConfig()
        self.map = SurfelMap()
        self.table = LabelTable(self.config.n_classes)
        self.baseline = PerSurfelBaseline(self.config.n_classes) if self.config.baseline else None
        self.poses: list[Pose] = []
        self.metrics: list[FrameMetrics] = []

    def _track(self, frame: Frame, vmap, nmap) -> Pose:
        cfg = self.config
        if frame.pose is not None and (cfg.use_gt_poses or not self.poses):
            return frame.pose
        if not self.poses:
            return Pose.identity()
        prev = self.poses[-1]
        ref_v, ref_n = model_maps(self.map, prev, self.intr)
        rel, report = geometry.icp_point_to_plane(
            vmap, nmap, ref_v, ref_n, self.intr,
            levels=cfg.icp_levels,
            max_iterations=cfg.icp_iterations,
            max_distance=cfg.icp_max_distance,
            max_angle=np.deg2rad(cfg.icp_max_angle_deg),
            min_inliers=cfg.icp_min_inliers,
        )  # fmt: skip
        log.debug("frame %d icp rms %.4g with %d inliers", frame.index, report.residual, report.inliers)
        return prev @ rel

    def process(self, frame: Frame) -> FrameTrace:
        cfg, intr = self.config, self.intr
        times: dict[str, float] = {}
        i = frame.index
        if frame.depth.shape != intr.shape:
            raise PipelineError("input", i, ValueError(f"depth shape {frame.depth.shape} != {intr.shape}"))

        with _timed(times, "maps", i):
            depth = np.where(frame.depth > cfg.max_depth, 0.0, frame.depth)
            vmap = geometry.compute_vertex_map(depth, intr)
            nmap = geometry.compute_normal_map(vmap)
        with _timed(times, "tracking", i):
            pose = self._track(frame, vmap, nmap)
        with _timed(times, "geometric_edges", i):
            bg = geometry.geometric_edge_map(vmap, nmap, np.deg2rad(cfg.edge_max_angle_deg), cfg.edge_max_distance)
        edges = bg
        if not cfg.geometric_only and frame.prediction is not None:
            with _timed(times, "semantic_edges", i):
                if frame.prediction.shape != intr.grid_shape + (cfg.n_classes,):
                    raise ValueError(f"prediction grid shape {frame.prediction.shape} does not fit this run")
                low = segmentation.argmax_class_map(frame.prediction)
                low = segmentation.median_filter_class_map(low)
                bs = segmentation.semantic_edge_map(segmentation.upsample_nearest(low))
                edges = segmentation.combine_edges(bg, bs)
        with _timed(times, "components", i):
            segments = segmentation.connected_components(edges, cfg.min_segment_px)

        with _timed(times, "render", i):
            before = render_label_map(self.map, pose, intr)
        with _timed(times, "propagate", i):
            prop = segmentation.propagate_labels(segments, before.labels, self.table.next_id, cfg.rho_prop, cfg.rho_merge)
            fresh = self.table.allocate(prop.n_fresh)
            apply_merge_directives(self.map, prop.merges, self.table.live_labels())
            merge_label_records(self.table, prop.merges)
        with _timed(times, "fuse", i):
            fuse_frame(
                self.map, vmap, nmap, prop.label_image(segments), pose, intr,
                max_distance=cfg.fuse_max_distance,
                max_angle=np.deg2rad(cfg.fuse_max_angle_deg),
                max_weight=cfg.max_weight,
                stride=cfg.fusion_stride,
                rendered=before,
            )  # fmt: skip
            self.table.set_surfel_counts(self.map.labels)

        # the post-fusion render is the one the probability update consumes
        t0 = time.perf_counter()
        after = render_label_map(self.map, pose, intr)
        times["render"] += (time.perf_counter() - t0) * 1e3
        mean_u = 0.0
        if frame.prediction is not None:
            with _timed(times, "prob_fusion", i):
                overlaps = compute_cell_overlaps(after.labels)
                update_label_probabilities(self.table, overlaps, frame.prediction)
            mean_u = overlaps.mean_labels_per_cell
            if self.baseline is not None:
                self.baseline.resize(len(self.map))
                likelihood = segmentation.upsample_nearest(frame.prediction)
                with _timed(times, "baseline", i):
                    self.baseline.update(likelihood, after.index)
        elif self.baseline is not None:
            self.baseline.resize(len(self.map))

        self.poses.append(pose)
        bytes_baseline = (
            self.baseline.probability_bytes if self.baseline is not None else len(self.map) * cfg.n_classes * 8
        )
        self.metrics.append(
            FrameMetrics(i, len(self.map), len(self.table), mean_u, self.table.probability_bytes, bytes_baseline, times)
        )
        return FrameTrace(i, pose, fresh, prop.merges, after.labels, frame.prediction, edges, bg, segments)

    def result(self) -> PipelineResult:
        return PipelineResult(self.map, self.table, self.metrics, self.poses, self.baseline)


def run_pipeline(
    frames: Iterable[Frame],
    intr: CameraIntrinsics,
    config: PipelineConfig | None = None,
    frame_hook: Callable[[FrameTrace], None] | None = None,
) -> PipelineResult:
    pipe = Pipeline(intr, config)
    for frame in frames:
        trace = pipe.process(frame)
        if frame_hook is not None:
            frame_hook(trace)
    return pipe.result()


def frames_from_synthetic(synthetic_frames, with_poses: bool = True) -> list[Frame]:
    return [
        Frame(i, f.timestamp, f.depth, f.prediction, f.pose if with_poses else None)
        for i, f in enumerate(synthetic_frames)
    ]


def write_metrics_csv(path, metrics: list[FrameMetrics]) -> None:
    rows = [m.row() for m in metrics]
    fields = list(rows[0]) if rows else list(FrameMetrics(0, 0, 0, 0.0, 0, 0).row())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
