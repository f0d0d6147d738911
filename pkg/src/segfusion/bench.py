"""Benchmark harness: segment-level fusion versus the per-surfel baseline.

Each configuration fuses one synthetic frame at a given fusion stride, so the
number of labels is set by the frame's segmentation while the number of
surfels follows the stride. Only the probability updates are timed.
"""

from __future__ import annotations

import csv
import json
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import synthetic
from .core import CameraIntrinsics, Pose
from .mapping import render_label_map
from .pipeline import PipelineConfig, frames_from_synthetic, run_pipeline
from .segmentation import upsample_nearest
from .semfusion import LabelTable, PerSurfelBaseline, compute_cell_overlaps, update_label_probabilities

COLUMNS = ("N_s", "N_l", "N", "t_segment_ms", "t_baseline_ms", "bytes_segment", "bytes_baseline", "mean_U_v")


@dataclass
class BenchmarkSuite:
    width: int = 320
    height: int = 240
    strides: list[int] = field(default_factory=lambda: [1, 3, 10, 32])
    class_counts: list[int] = field(default_factory=lambda: [13])
    repeats: int = 20
    seed: int = 0
    n_boxes: int = 4

    @classmethod
    def from_json(cls, path) -> "BenchmarkSuite":
        return cls(**json.loads(Path(path).read_text()))


def _median_ms(fn, repeats: int) -> float:
    fn()  # warm-up
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(samples)


def benchmark_configuration(frame, intr: CameraIntrinsics, n_classes: int, stride: int, repeats: int) -> dict:
    config = PipelineConfig(n_classes=n_classes, fusion_stride=stride)
    result = run_pipeline(frames_from_synthetic([frame]), intr, config)
    smap, table = result.map, result.table
    rendered = render_label_map(smap, frame.pose, intr)
    pred = frame.prediction
    likelihood = upsample_nearest(pred)
    baseline = PerSurfelBaseline(n_classes)
    baseline.resize(len(smap))

    def segment_update():
        update_label_probabilities(table, compute_cell_overlaps(rendered.labels), pred)

    t_segment = _median_ms(segment_update, repeats)
    t_baseline = _median_ms(lambda: baseline.update(likelihood, rendered.index), repeats)
    return {
        "N_s": len(smap),
        "N_l": len(table),
        "N": n_classes,
        "t_segment_ms": t_segment,
        "t_baseline_ms": t_baseline,
        "bytes_segment": table.probability_bytes,
        "bytes_baseline": baseline.probability_bytes,
        "mean_U_v": compute_cell_overlaps(rendered.labels).mean_labels_per_cell,
    }


def run_benchmark(suite: BenchmarkSuite | None = None) -> list[dict]:
    suite = suite or BenchmarkSuite()
    intr = CameraIntrinsics.default(suite.width, suite.height)
    rows = []
    for n_classes in suite.class_counts:
        rng = np.random.default_rng(suite.seed)
        scene = synthetic.Scene(
            intr,
            synthetic.random_room(rng, suite.n_boxes, n_classes),
            [Pose.identity()],
            n_classes=n_classes,
            seed=suite.seed,
        )
        frame = synthetic.generate_synthetic_scene(scene)[0]
        for stride in suite.strides:
            rows.append(benchmark_configuration(frame, intr, n_classes, stride, suite.repeats))
    return rows


def storage_bytes(n_labels: int, n_surfels: int, n_classes: int = 13) -> tuple[int, int]:
    """Probability storage actually allocated by both methods at the given counts."""
    table = LabelTable(n_classes, capacity=n_labels)
    table.allocate(n_labels)
    baseline = PerSurfelBaseline(n_classes)
    baseline.resize(n_surfels)
    return table.probability_bytes, baseline.probability_bytes


def write_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
